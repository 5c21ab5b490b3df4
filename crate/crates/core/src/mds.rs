//! Metric MDS of class targets: weighted raw stress minimized by SMACOF.
//!
//! Intra-class distances are zero, so the optimal per-sample configuration
//! collapses every class to a point. Targets are therefore solved at class
//! level with class sizes as weights (`w_ij = w_i·w_j`), which makes the cost
//! `O(K²)` per iteration instead of `O(n²)`. [`per_sample_smacof`] keeps the
//! uncollapsed problem around for cross-checking on small inputs.

use log::warn;
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Symmetric matrix of prescribed distances between classes.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSpec {
    d: Array2<f64>,
}

impl DistanceSpec {
    pub fn new(d: Array2<f64>) -> Result<Self> {
        let k = d.nrows();
        if k == 0 || d.ncols() != k {
            return Err(Error::Shape(format!("distance matrix must be square, got {:?}", d.dim())));
        }
        for i in 0..k {
            if d[[i, i]] != 0.0 {
                return Err(Error::InvalidArgument(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..k {
                let v = d[[i, j]];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidArgument(format!("entry ({i},{j}) = {v} is not a finite nonnegative distance")));
                }
                if v != d[[j, i]] {
                    return Err(Error::InvalidArgument(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(DistanceSpec { d })
    }

    /// `inter` between every pair of distinct classes.
    pub fn uniform(k: usize, inter: f64) -> Result<Self> {
        if k == 0 || !(inter > 0.0) || !inter.is_finite() {
            return Err(Error::InvalidArgument(format!("uniform spec needs K >= 1 and inter > 0, got K={k}, inter={inter}")));
        }
        Ok(DistanceSpec { d: Array2::from_shape_fn((k, k), |(i, j)| if i == j { 0.0 } else { inter }) })
    }

    pub fn k(&self) -> usize {
        self.d.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[[i, j]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.d
    }

    /// Restriction to the given classes, in order.
    pub fn restrict(&self, classes: &[usize]) -> DistanceSpec {
        DistanceSpec { d: Array2::from_shape_fn((classes.len(), classes.len()), |(i, j)| self.d[[classes[i], classes[j]]]) }
    }

    /// Per-sample dissimilarities `d[label_i][label_j]`.
    pub fn expand(&self, labels: &[usize]) -> DistanceSpec {
        DistanceSpec { d: Array2::from_shape_fn((labels.len(), labels.len()), |(i, j)| self.d[[labels[i], labels[j]]]) }
    }
}

/// Weighted points in the latent space; row `i` is the center of class `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterConfiguration {
    pub centers: Array2<f64>,
    pub weights: Array1<f64>,
}

impl CenterConfiguration {
    pub fn new(centers: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        if centers.nrows() != weights.len() {
            return Err(Error::Shape(format!("{} centers but {} weights", centers.nrows(), weights.len())));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("center weights must be positive".into()));
        }
        Ok(CenterConfiguration { centers, weights })
    }

    pub fn unit(centers: Array2<f64>) -> Self {
        let k = centers.nrows();
        CenterConfiguration { centers, weights: Array1::ones(k) }
    }

    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn weighted_centroid(&self) -> Array1<f64> {
        let total = self.weights.sum();
        self.weights.dot(&self.centers) / total
    }

    fn recenter(&mut self) {
        let c = self.weighted_centroid();
        self.centers -= &c;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressReport {
    pub initial_stress: f64,
    pub final_stress: f64,
    pub iterations: usize,
    /// Stress of every configuration visited, starting with the initial one.
    pub history: Vec<f64>,
    /// Number of zero-distance guard perturbations applied.
    pub perturbations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmacofOptions {
    pub max_iter: usize,
    /// Stop once the relative stress decrease of one iteration falls below this.
    pub tol: f64,
    /// Seed for the zero-distance guard directions.
    pub seed: u64,
}

impl Default for SmacofOptions {
    fn default() -> Self {
        SmacofOptions { max_iter: 300, tol: 1e-9, seed: 0 }
    }
}

const GUARD_STEP: f64 = 1e-6;
const COINCIDENT: f64 = 1e-12;

fn pair_distance(x: &Array2<f64>, i: usize, j: usize) -> f64 {
    x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn raw_stress(x: &Array2<f64>, w: &Array1<f64>, spec: &DistanceSpec) -> f64 {
    let k = x.nrows();
    let mut s = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let r = pair_distance(x, i, j) - spec.get(i, j);
            s += w[i] * w[j] * r * r;
        }
    }
    s
}

/// Weighted raw stress `Σ_{i<j} w_i·w_j·(‖c_i − c_j‖ − d_ij)²`.
pub fn stress(config: &CenterConfiguration, spec: &DistanceSpec) -> Result<f64> {
    if config.k() != spec.k() {
        return Err(Error::Shape(format!("configuration has {} points, spec has {}", config.k(), spec.k())));
    }
    Ok(raw_stress(&config.centers, &config.weights, spec))
}

/// Moore-Penrose inverse of the weighted Laplacian `V`, via `(V + J/k)⁻¹ − J/k`
/// (valid since all pair weights are positive).
fn laplacian_pinv(w: &Array1<f64>) -> Result<Array2<f64>> {
    let k = w.len();
    let kf = k as f64;
    let mut v = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                v[(i, j)] = -w[i] * w[j];
                v[(i, i)] += w[i] * w[j];
            }
        }
    }
    v.add_scalar_mut(1.0 / kf);
    let inv = v.try_inverse().ok_or_else(|| Error::Numeric("weighted Laplacian is singular".into()))?;
    Ok(linalg::from_na(&inv) - 1.0 / kf)
}

/// Nudges apart coincident points whose prescribed distance is positive.
fn zero_distance_guard(x: &mut Array2<f64>, spec: &DistanceSpec, rng: &mut ChaCha8Rng) -> usize {
    let (k, m) = x.dim();
    let mut moved = 0;
    for i in 0..k {
        for j in (i + 1)..k {
            if spec.get(i, j) > 0.0 && pair_distance(x, i, j) < COINCIDENT {
                let dir: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                for (c, d) in x.row_mut(j).iter_mut().zip(&dir) {
                    *c += GUARD_STEP * d / norm;
                }
                moved += 1;
            }
        }
    }
    moved
}

/// Scratch buffers for allocation-free Guttman iterations on a `k × m` configuration.
struct Workspace {
    k: usize,
    m: usize,
    dist: Vec<f64>,
    b: Vec<f64>,
    bx: Vec<f64>,
    next: Vec<f64>,
}

impl Workspace {
    fn new(k: usize, m: usize) -> Self {
        Workspace { k, m, dist: vec![0.0; k * k], b: vec![0.0; k * k], bx: vec![0.0; k * m], next: vec![0.0; k * m] }
    }

    fn distances(&mut self, x: &[f64]) {
        let (k, m) = (self.k, self.m);
        for i in 0..k {
            self.dist[i * k + i] = 0.0;
            for j in (i + 1)..k {
                let mut sq = 0.0;
                for c in 0..m {
                    let d = x[i * m + c] - x[j * m + c];
                    sq += d * d;
                }
                let d = sq.sqrt();
                self.dist[i * k + j] = d;
                self.dist[j * k + i] = d;
            }
        }
    }

    fn any_coincident(&self) -> bool {
        let k = self.k;
        (0..k).any(|i| ((i + 1)..k).any(|j| self.dist[i * k + j] < COINCIDENT))
    }

    /// Stress of the configuration whose distances are currently stored.
    fn stress(&self, w: &[f64], spec: &DistanceSpec) -> f64 {
        let k = self.k;
        let mut s = 0.0;
        for i in 0..k {
            for j in (i + 1)..k {
                let r = self.dist[i * k + j] - spec.get(i, j);
                s += w[i] * w[j] * r * r;
            }
        }
        s
    }

    /// One Guttman transform `X ← V⁺ · B(X) · X` into `self.next`, using the stored distances of `x`.
    fn guttman(&mut self, x: &[f64], w: &[f64], spec: &DistanceSpec, vinv: &[f64]) {
        let (k, m) = (self.k, self.m);
        for i in 0..k {
            let mut diag = 0.0;
            for j in 0..k {
                let d = self.dist[i * k + j];
                let v = if i != j && d > 0.0 { -w[i] * w[j] * spec.get(i, j) / d } else { 0.0 };
                self.b[i * k + j] = v;
                diag -= v;
            }
            self.b[i * k + i] = diag;
        }
        matmul(&self.b, x, &mut self.bx, k, k, m);
        matmul(vinv, &self.bx, &mut self.next, k, k, m);
    }
}

fn matmul(a: &[f64], b: &[f64], out: &mut [f64], rows: usize, inner: usize, cols: usize) {
    out.fill(0.0);
    for i in 0..rows {
        for l in 0..inner {
            let av = a[i * inner + l];
            if av != 0.0 {
                for j in 0..cols {
                    out[i * cols + j] += av * b[l * cols + j];
                }
            }
        }
    }
}

/// SMACOF from `init`; the returned configuration has its weighted centroid at the origin.
pub fn smacof_solve(init: &CenterConfiguration, spec: &DistanceSpec, opts: &SmacofOptions) -> Result<(CenterConfiguration, StressReport)> {
    if init.k() != spec.k() {
        return Err(Error::Shape(format!("configuration has {} points, spec has {}", init.k(), spec.k())));
    }
    if opts.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    if init.centers.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("initial configuration is not finite".into()));
    }
    let mut config = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut perturbations = 0;

    if config.k() > 1 {
        perturbations += zero_distance_guard(&mut config.centers, spec, &mut rng);
    }
    let initial = raw_stress(&config.centers, &config.weights, spec);
    let mut history = vec![initial];
    let mut iterations = 0;

    if config.k() > 1 && initial > 0.0 {
        let vinv: Vec<f64> = laplacian_pinv(&config.weights)?.iter().copied().collect();
        let w = config.weights.to_vec();
        let (k, m) = config.centers.dim();
        let mut x: Vec<f64> = config.centers.iter().copied().collect();
        let mut ws = Workspace::new(k, m);
        let mut current = initial;
        ws.distances(&x);
        while iterations < opts.max_iter {
            if ws.any_coincident() {
                let mut xa = Array2::from_shape_vec((k, m), x).expect("shape is k × m");
                let moved = zero_distance_guard(&mut xa, spec, &mut rng);
                x = xa.into_raw_vec_and_offset().0;
                if moved > 0 {
                    perturbations += moved;
                    ws.distances(&x);
                    current = ws.stress(&w, spec);
                }
            }
            ws.guttman(&x, &w, spec, &vinv);
            std::mem::swap(&mut x, &mut ws.next);
            ws.distances(&x);
            let next_stress = ws.stress(&w, spec);
            iterations += 1;
            if !next_stress.is_finite() {
                return Err(Error::Numeric("SMACOF produced non-finite stress".into()));
            }
            history.push(next_stress);
            let decrease = current - next_stress;
            current = next_stress;
            if next_stress == 0.0 || decrease < opts.tol * (current + decrease) {
                break;
            }
        }
        config.centers = Array2::from_shape_vec((k, m), x).expect("shape is k × m");
    }
    config.recenter();
    let final_stress = raw_stress(&config.centers, &config.weights, spec);
    Ok((config, StressReport { initial_stress: initial, final_stress, iterations, history, perturbations }))
}

/// Class-level targets for labeled latents.
#[derive(Debug, Clone)]
pub struct SampleTargets {
    /// `m × n` target for every input column.
    pub zstar: Array2<f64>,
    /// Solved center of each class; rows of empty classes are zero.
    pub centers: Array2<f64>,
    /// Classes without samples, left out of the solve.
    pub skipped: Vec<usize>,
    pub report: StressReport,
}

/// Per-class means of the columns of `z` (`m × n`) and the class sizes.
pub fn class_means(z: ArrayView2<'_, f64>, labels: &[usize], k: usize) -> Result<(Array2<f64>, Vec<usize>)> {
    if z.ncols() != labels.len() {
        return Err(Error::Shape(format!("{} latent columns but {} labels", z.ncols(), labels.len())));
    }
    let m = z.nrows();
    let mut sums = Array2::<f64>::zeros((k, m));
    let mut counts = vec![0usize; k];
    for (col, &l) in z.axis_iter(Axis(1)).zip(labels) {
        if l >= k {
            return Err(Error::InvalidArgument(format!("label {l} out of range for K={k}")));
        }
        let mut row = sums.row_mut(l);
        row += &col;
        counts[l] += 1;
    }
    for (mut row, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    Ok((sums, counts))
}

/// Solves class targets warm-started from the class means of `z` and assigns
/// each column the solved center of its class.
pub fn per_sample_targets(z: ArrayView2<'_, f64>, labels: &[usize], spec: &DistanceSpec, opts: &SmacofOptions) -> Result<SampleTargets> {
    let k = spec.k();
    let m = z.nrows();
    let (means, counts) = class_means(z, labels, k)?;
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    let skipped: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !skipped.is_empty() {
        warn!("classes {skipped:?} have no labeled samples; left out of the MDS solve");
    }
    if present.is_empty() {
        return Err(Error::InvalidArgument("no labeled samples".into()));
    }
    let init = CenterConfiguration::new(means.select(Axis(0), &present), present.iter().map(|&c| counts[c] as f64).collect())?;
    let (solved, report) = smacof_solve(&init, &spec.restrict(&present), opts)?;
    let mut centers = Array2::<f64>::zeros((k, m));
    for (row, &c) in present.iter().enumerate() {
        centers.row_mut(c).assign(&solved.centers.row(row));
    }
    let mut zstar = Array2::<f64>::zeros((m, labels.len()));
    for (mut col, &l) in zstar.axis_iter_mut(Axis(1)).zip(labels) {
        col.assign(&centers.row(l));
    }
    Ok(SampleTargets { zstar, centers, skipped, report })
}

/// Uncollapsed SMACOF over every sample with unit weights, warm-started from `z`.
/// Cubic in `n`; meant for validating [`per_sample_targets`] on small sets.
pub fn per_sample_smacof(
    z: ArrayView2<'_, f64>,
    labels: &[usize],
    spec: &DistanceSpec,
    opts: &SmacofOptions,
) -> Result<(Array2<f64>, StressReport)> {
    const LIMIT: usize = 2000;
    if labels.len() > LIMIT {
        return Err(Error::Precondition(format!("per-sample mode supports at most {LIMIT} samples")));
    }
    if z.ncols() != labels.len() {
        return Err(Error::Shape(format!("{} latent columns but {} labels", z.ncols(), labels.len())));
    }
    let init = CenterConfiguration::unit(z.t().to_owned());
    let (solved, report) = smacof_solve(&init, &spec.expand(labels), opts)?;
    Ok((solved.centers.t().to_owned(), report))
}
