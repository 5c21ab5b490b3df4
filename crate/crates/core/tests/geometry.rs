mod common;

use common::*;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use sae_core::align::{ideal_rotation, place_targets};
use sae_core::mds::{
    class_means, per_sample_smacof, per_sample_targets, smacof_solve, stress, CenterConfiguration, DistanceSpec, SmacofOptions,
};

fn embeddable(k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> DistanceSpec {
    let pts = random_matrix(k, k.saturating_sub(1).max(1), rng) * 2.0;
    DistanceSpec::new(row_distances(&pts)).unwrap()
}

fn random_spec(k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> DistanceSpec {
    let mut d = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let v = rng.random_range(0.1..3.0);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    DistanceSpec::new(d).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smacof_is_monotone_and_centered(seed in 0u64..10_000, k in 2usize..7, m in 1usize..5, embed in any::<bool>()) {
        let mut rng = seeded(seed);
        let spec = if embed { embeddable(k, &mut rng) } else { random_spec(k, &mut rng) };
        let weights: Array1<f64> = (0..k).map(|_| rng.random_range(1.0..10.0)).collect();
        let init = CenterConfiguration::new(random_matrix(k, m, &mut rng), weights).unwrap();
        let (out, report) = smacof_solve(&init, &spec, &SmacofOptions::default()).unwrap();
        for w in report.history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "stress rose {} -> {}", w[0], w[1]);
        }
        prop_assert!(report.final_stress <= report.initial_stress + 1e-12);
        let c = out.weighted_centroid();
        prop_assert!(c.dot(&c).sqrt() < 1e-9);
        let direct = direct_stress(&out.centers, out.weights.as_slice().unwrap(), spec.matrix());
        prop_assert!((stress(&out, &spec).unwrap() - direct).abs() <= 1e-9 * (1.0 + direct));
    }

    #[test]
    fn embeddable_specs_reach_zero_stress(seed in 0u64..10_000, k in 2usize..7) {
        let mut rng = seeded(seed);
        let spec = embeddable(k, &mut rng);
        let m = k - 1;
        let weights: Array1<f64> = (0..k).map(|_| rng.random_range(1.0..10.0)).collect();
        let mut config = CenterConfiguration::new(random_matrix(k, m, &mut rng), weights).unwrap();
        let opts = SmacofOptions { max_iter: 50_000, tol: 0.0, seed };
        // SMACOF is memoryless, so chunked runs equal one long run
        let mut final_stress = f64::INFINITY;
        for _ in 0..40 {
            let (next, report) = smacof_solve(&config, &spec, &opts).unwrap();
            config = next;
            final_stress = report.final_stress;
            if final_stress < 1e-10 {
                break;
            }
        }
        prop_assert!(final_stress < 1e-8, "final stress {}", final_stress);
    }

    #[test]
    fn per_sample_targets_collapse_by_label(seed in 0u64..10_000, k in 1usize..5, n in 6usize..40) {
        let mut rng = seeded(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let z = random_matrix(3, n, &mut rng);
        let spec = DistanceSpec::uniform(k, 1.0).unwrap();
        let t = per_sample_targets(z.view(), &labels, &spec, &SmacofOptions::default()).unwrap();
        for a in 0..n {
            for b in 0..n {
                if labels[a] == labels[b] {
                    prop_assert_eq!(t.zstar.column(a), t.zstar.column(b));
                }
            }
        }
    }

    #[test]
    fn rotation_is_orthogonal_isometric_and_improving(seed in 0u64..10_000, m in 2usize..6, reflect in any::<bool>(), noise in 0.0f64..0.2) {
        let mut rng = seeded(seed);
        let n = m + 5 + (seed % 20) as usize;
        let zstar = center_columns_rows(&random_matrix(m, n, &mut rng));
        let q = random_orthogonal(m, reflect, &mut rng);
        let z = q.dot(&zstar) + random_matrix(m, n, &mut rng) * noise;
        let res = ideal_rotation(z.view(), zstar.view()).unwrap();
        prop_assert_eq!(res.rank_used, m);
        let rtr = res.r.t().dot(&res.r) - Array2::<f64>::eye(m);
        prop_assert!(rtr.iter().all(|v| v.abs() < 1e-6));
        let zt = place_targets(res.r.view(), zstar.view()).unwrap();
        let (d1, d2) = (row_distances(&zt.t().to_owned()), row_distances(&zstar.t().to_owned()));
        prop_assert!((d1 - d2).iter().all(|v| v.abs() < 1e-6));
        let zc = center_columns_rows(&z);
        prop_assert!(frobenius(&(&zc - &zt)) <= frobenius(&(&zc - &zstar)) + 1e-9);
    }
}

#[test]
fn rotation_matches_angle_grid_in_2d() {
    let mut rng = seeded(11);
    for i in 0..10 {
        let n = 12 + i;
        let zstar = center_columns_rows(&random_matrix(2, n, &mut rng));
        let q = random_orthogonal(2, i % 2 == 1, &mut rng);
        let z = q.dot(&zstar) + 0.7;
        let res = ideal_rotation(z.view(), zstar.view()).unwrap();
        let best = grid_best_residual_2d(&center_columns_rows(&z), &zstar, 1_000_000);
        assert!((res.residual - best).abs() < 1e-4, "{} vs grid {}", res.residual, best);
    }
}

#[test]
fn three_class_targets_are_unit_separated() {
    let mut rng = seeded(5);
    let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
    let z = random_matrix(10, 300, &mut rng);
    let spec = DistanceSpec::uniform(3, 1.0).unwrap();
    let t = per_sample_targets(z.view(), &labels, &spec, &SmacofOptions::default()).unwrap();
    let d = row_distances(&t.centers);
    for a in 0..3 {
        for b in 0..3 {
            if a != b {
                assert!((d[[a, b]] - 1.0).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn collapsed_and_per_sample_solutions_agree_on_distances() {
    let mut rng = seeded(8);
    let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
    let z = random_matrix(2, 60, &mut rng);
    let spec = DistanceSpec::uniform(3, 1.0).unwrap();
    let opts = SmacofOptions { max_iter: 3000, tol: 1e-14, seed: 0 };
    let collapsed = per_sample_targets(z.view(), &labels, &spec, &opts).unwrap();
    let (full, _) = per_sample_smacof(z.view(), &labels, &spec, &opts).unwrap();
    let (means, _) = class_means(full.view(), &labels, 3).unwrap();
    let d_full = row_distances(&means);
    let d_col = row_distances(&collapsed.centers);
    assert!((d_full - d_col).iter().all(|v| v.abs() < 1e-3));
}
