//! Synthetic vector datasets for tests, examples and toy runs.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind};
use crate::error::{Error, Result};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Isotropic Gaussian clusters, `n_per_class` samples around each row of `centers`.
/// Samples are interleaved by class (`0, 1, …, K−1, 0, 1, …`).
pub fn gaussian_blobs(centers: &Array2<f64>, n_per_class: usize, std: f64, seed: u64) -> Result<Dataset> {
    let (k, dim) = centers.dim();
    if k == 0 || dim == 0 || n_per_class == 0 {
        return Err(Error::InvalidArgument("blobs need classes, a dimension and samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = k * n_per_class;
    let mut x = Array2::<f32>::zeros((n, dim));
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        for d in 0..dim {
            x[[i, d]] = (centers[[c, d]] + std * normal(&mut rng)) as f32;
        }
        classes.push(c);
    }
    Dataset::with_classes(x, classes, k, FeatureKind::Vector)
}

/// Two classes whose only difference lies along a low-variance direction,
/// orthogonal to a few dominant high-variance factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HiddenStructure {
    pub n: usize,
    pub dim: usize,
    /// Number of dominant nuisance factors.
    pub factors: usize,
    pub factor_std: f64,
    /// Class offset `±signal` along the class direction.
    pub signal: f64,
    /// Isotropic noise std on every coordinate.
    pub noise: f64,
    /// Fraction of samples whose class offset is scaled by a uniform draw in `[0, 1)`,
    /// placing them near the class boundary.
    pub ambiguous: f64,
    pub seed: u64,
}

impl Default for HiddenStructure {
    fn default() -> Self {
        HiddenStructure { n: 1000, dim: 20, factors: 4, factor_std: 3.0, signal: 0.5, noise: 0.1, ambiguous: 0.0, seed: 0 }
    }
}

/// Random orthonormal columns via Gram-Schmidt on Gaussian vectors.
fn orthonormal(dim: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((dim, cols));
    let mut c = 0;
    while c < cols {
        let mut v = Array1::from_shape_simple_fn(dim, || normal(rng));
        for j in 0..c {
            let qj = q.column(j);
            let p = qj.dot(&v);
            v.scaled_add(-p, &qj);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            q.column_mut(c).assign(&(v / norm));
            c += 1;
        }
    }
    q
}

impl HiddenStructure {
    /// The dataset together with the unit class direction.
    pub fn generate(&self) -> Result<(Dataset, Array1<f64>)> {
        if self.factors + 1 > self.dim || self.n < 2 {
            return Err(Error::InvalidArgument("need dim > factors and at least two samples".into()));
        }
        if !(0.0..=1.0).contains(&self.ambiguous) {
            return Err(Error::InvalidArgument("ambiguous fraction must lie in [0, 1]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let basis = orthonormal(self.dim, self.factors + 1, &mut rng);
        let class_dir = basis.column(self.factors).to_owned();
        let mut x = Array2::<f32>::zeros((self.n, self.dim));
        let mut classes = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let c = i % 2;
            let mut v = Array1::<f64>::zeros(self.dim);
            for f in 0..self.factors {
                v.scaled_add(self.factor_std * normal(&mut rng), &basis.column(f));
            }
            let mut s = if c == 1 { self.signal } else { -self.signal };
            if rng.random::<f64>() < self.ambiguous {
                s *= rng.random::<f64>();
            }
            v.scaled_add(s, &class_dir);
            for d in 0..self.dim {
                x[[i, d]] = (v[d] + self.noise * normal(&mut rng)) as f32;
            }
            classes.push(c);
        }
        Ok((Dataset::with_classes(x, classes, 2, FeatureKind::Vector)?, class_dir))
    }
}
