//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sae_core::data::Dataset;
use sae_core::nn::Activation;
use sae_core::optim::Optimizer;
use sae_core::sae::{epoch_order, init_model, LatentTargets, MlpSpec, SaeModel, TrainConfig};

/// Weighted raw stress by plain double loop over all pairs.
pub fn direct_stress(centers: &Array2<f64>, weights: &[f64], d: &Array2<f64>) -> f64 {
    let k = centers.nrows();
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i < j {
                let mut sq = 0.0;
                for c in 0..centers.ncols() {
                    let diff = centers[[i, c]] - centers[[j, c]];
                    sq += diff * diff;
                }
                let r = sq.sqrt() - d[[i, j]];
                s += weights[i] * weights[j] * r * r;
            }
        }
    }
    s
}

/// Pairwise Euclidean distances between the rows of `p`.
pub fn row_distances(p: &Array2<f64>) -> Array2<f64> {
    let k = p.nrows();
    Array2::from_shape_fn((k, k), |(i, j)| {
        let d = &p.row(i) - &p.row(j);
        d.dot(&d).sqrt()
    })
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Random orthogonal matrix by Gram-Schmidt; `reflect` forces determinant −1.
pub fn random_orthogonal(m: usize, reflect: bool, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((m, m));
    let mut c = 0;
    while c < m {
        let mut v: Array1<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        for j in 0..c {
            let p = q.column(j).dot(&v);
            v = v - p * &q.column(j);
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-3 {
            q.column_mut(c).assign(&(v / n));
            c += 1;
        }
    }
    if (determinant(&q) < 0.0) != reflect {
        q.column_mut(0).mapv_inplace(|v| -v);
    }
    q
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(a: &Array2<f64>) -> f64 {
    let mut a = a.clone();
    let n = a.nrows();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[[i, c]].abs().total_cmp(&a[[j, c]].abs())).unwrap();
        if a[[p, c]] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                a.swap([p, k], [c, k]);
            }
            det = -det;
        }
        det *= a[[c, c]];
        for r in (c + 1)..n {
            let f = a[[r, c]] / a[[c, c]];
            for k in c..n {
                a[[r, k]] -= f * a[[c, k]];
            }
        }
    }
    det
}

pub fn center_columns_rows(z: &Array2<f64>) -> Array2<f64> {
    let mean = z.mean_axis(Axis(1)).unwrap();
    z - &mean.insert_axis(Axis(1))
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Best `‖Z − R·Z*‖_F` over an angle grid of rotations and reflections in 2D.
///
/// Uses `‖Z − R Z*‖² = ‖Z‖² + ‖Z*‖² − 2·tr(Rᵀ Z Z*ᵀ)`.
pub fn grid_best_residual_2d(z: &Array2<f64>, zstar: &Array2<f64>, steps: usize) -> f64 {
    let m = z.dot(&zstar.t());
    let base = z.iter().map(|v| v * v).sum::<f64>() + zstar.iter().map(|v| v * v).sum::<f64>();
    let mut best = f64::INFINITY;
    for i in 0..steps {
        let t = i as f64 / steps as f64 * std::f64::consts::TAU;
        let (s, c) = t.sin_cos();
        // rotation [[c, -s], [s, c]]
        let rot = c * (m[[0, 0]] + m[[1, 1]]) + s * (m[[1, 0]] - m[[0, 1]]);
        // reflection [[c, s], [s, -c]]
        let refl = c * (m[[0, 0]] - m[[1, 1]]) + s * (m[[1, 0]] + m[[0, 1]]);
        best = best.min(base - 2.0 * rot.max(refl));
    }
    best.max(0.0).sqrt()
}

/// A plain autoencoder loop written against the network primitives: per epoch,
/// shuffle with `epoch_order`, and for every mini-batch backpropagate
/// `mean ‖x − x̂‖²` and take one optimizer step.
pub fn reference_autoencoder(mut model: SaeModel<f32>, ds: &Dataset, cfg: &TrainConfig) -> SaeModel<f32> {
    let mut opt = Optimizer::<f32>::new(cfg.optimizer, cfg.learning_rate);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, ds.len());
        for batch in order.chunks(cfg.batch_size) {
            let x = ds.rows(batch);
            let xt = x.t();
            let enc = model.encoder.forward_cached(xt).unwrap();
            let z = enc.last().unwrap();
            let dec = model.decoder.forward_cached(z.view()).unwrap();
            let xhat = dec.last().unwrap();
            let scale = 2.0f32 / batch.len() as f32;
            let mut g = xhat - &xt;
            g.mapv_inplace(|v| v * scale);
            let (dg, gz) = model.decoder.backward(z.view(), &dec, g);
            let (eg, _) = model.encoder.backward(xt, &enc, gz);
            let grads: Vec<&[f32]> = eg.iter().chain(&dg).flat_map(|g| g.slices()).collect();
            opt.step(model.param_slices_mut(), grads);
        }
    }
    model
}

pub fn bits(model: &SaeModel<f32>) -> Vec<u32> {
    model.param_slices().iter().flat_map(|s| s.iter().map(|v| v.to_bits())).collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// MNIST directory from `SAE_MNIST_DIR`, defaulting to `<workspace>/data/mnist`.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("SAE_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub const FD_H: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
// gradients below this magnitude are compared absolutely
const FD_FLOOR: f64 = 1e-6;

fn flat_params(model: &SaeModel<f64>) -> Vec<f64> {
    model.param_slices().iter().flat_map(|s| s.iter().copied()).collect()
}

fn perturbed(model: &SaeModel<f64>, index: usize, delta: f64) -> SaeModel<f64> {
    let mut m = model.clone();
    let mut k = index;
    for s in m.param_slices_mut() {
        if k < s.len() {
            s[k] += delta;
            break;
        }
        k -= s.len();
    }
    m
}

pub struct FdCase {
    pub model: SaeModel<f64>,
    pub x: Array2<f64>,
    pub zt: Array2<f64>,
    pub mask: Vec<bool>,
}

/// A random `[6, 4, 2]` model with nonzero biases, a batch of 7 and a partial label mask.
pub fn fd_case(seed: u64, output: Activation) -> FdCase {
    let spec = MlpSpec::new(vec![6, 4, 2], output).unwrap();
    let mut model: SaeModel<f64> = init_model(&spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    // nonzero biases so every code path is exercised
    for s in model.param_slices_mut() {
        if s.len() <= 6 {
            s.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
    }
    let n = 7;
    let x = Array2::from_shape_fn((6, n), |_| rng.random_range(0.0..1.0));
    let zt = Array2::from_shape_fn((2, n), |_| rng.random_range(-1.0..1.0));
    let mask = (0..n).map(|j| j % 3 != 2).collect();
    FdCase { model, x, zt, mask }
}

/// Largest relative gap between analytic and central-difference gradients.
pub fn fd_max_relative_error(c: &FdCase, gamma: f64) -> f64 {
    let targets = || Some(LatentTargets { ztilde: c.zt.view(), mask: &c.mask });
    let (grads, _) = c.model.gradients(c.x.view(), targets(), gamma).unwrap();
    let analytic: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();
    assert_eq!(analytic.len(), flat_params(&c.model).len());
    let loss = |m: &SaeModel<f64>| m.losses(c.x.view(), targets(), gamma).unwrap().combined;
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let fd = (loss(&perturbed(&c.model, i, FD_H)) - loss(&perturbed(&c.model, i, -FD_H))) / (2.0 * FD_H);
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(FD_FLOOR);
        worst = worst.max(err);
    }
    worst
}
