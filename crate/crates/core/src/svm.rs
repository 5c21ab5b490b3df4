//! One-vs-one linear SVMs on latent codes, center-normalized scores and
//! calibration diagnostics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::sae::{encode_ids, SaeModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { lambda: 1e-3, epochs: 50, seed: 0 }
    }
}

/// Affine decision function of the pair `(a, b)`, `a < b`; positive toward `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    pub a: usize,
    pub b: usize,
    pub w: Array1<f64>,
    pub bias: f64,
}

impl PairModel {
    pub fn value(&self, z: ArrayView1<'_, f64>) -> f64 {
        self.w.dot(&z) + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub n_classes: usize,
    /// Pairs in lexicographic order `(0,1), (0,2), …, (K−2,K−1)`.
    pub pairs: Vec<PairModel>,
    /// `K × m` per-class latent means.
    pub centers: Array2<f64>,
    pub lambda: f64,
}

/// Index of `(a, b)` (`a < b`) in the lexicographic pair list.
pub fn pair_index(k: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < k);
    a * (2 * k - a - 1) / 2 + (b - a - 1)
}

/// Pegasos on `±1` labels; the bias is a constant augmented feature, regularized with `w`.
/// Inputs are centered and divided by their RMS radius (one scale for all axes, so
/// angles are kept), and the solution is mapped back.
fn pegasos(x: &Array2<f64>, y: &[f64], lambda: f64, epochs: usize, rng: &mut ChaCha8Rng) -> (Array1<f64>, f64) {
    let (n, m) = x.dim();
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let centered = x - &mean;
    let rms = (centered.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let scale = if rms > 1e-12 { rms } else { 1.0 };
    let xs = centered / scale;

    // last coordinate is the constant feature
    let mut w = Array1::<f64>::zeros(m + 1);
    let radius = 1.0 / lambda.sqrt();
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let row = xs.row(i);
            let f = w.slice(ndarray::s![..m]).dot(&row) + w[m];
            w *= 1.0 - eta * lambda;
            if y[i] * f < 1.0 {
                w.slice_mut(ndarray::s![..m]).scaled_add(eta * y[i], &row);
                w[m] += eta * y[i];
            }
            let norm = w.dot(&w).sqrt();
            if norm > radius {
                w *= radius / norm;
            }
        }
    }
    let ws = w.slice(ndarray::s![..m]).to_owned() / scale;
    let bias = w[m] - ws.dot(&mean);
    (ws, bias)
}

/// Regularized hinge objective `λ/2·‖w‖² + mean(max(0, 1 − y·f(x)))` of one pair.
pub fn pair_objective(pair: &PairModel, latents: ArrayView2<'_, f64>, labels: &[usize], lambda: f64) -> f64 {
    let mut hinge = 0.0;
    let mut n = 0usize;
    for (z, &l) in latents.axis_iter(Axis(1)).zip(labels) {
        let y = if l == pair.b {
            1.0
        } else if l == pair.a {
            -1.0
        } else {
            continue;
        };
        hinge += (1.0 - y * pair.value(z)).max(0.0);
        n += 1;
    }
    0.5 * lambda * pair.w.dot(&pair.w) + hinge / n.max(1) as f64
}

/// Fits one decision function per class pair. `latents` is `m × n`.
pub fn svm_fit(latents: ArrayView2<'_, f64>, labels: &[usize], n_classes: usize, params: &SvmParams) -> Result<SvmModel> {
    let (m, n) = latents.dim();
    if n != labels.len() {
        return Err(Error::Shape(format!("{n} latent columns but {} labels", labels.len())));
    }
    if !(params.lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    if n_classes < 2 {
        return Err(Error::Fit(format!("need at least two classes, got K={n_classes}")));
    }
    if latents.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite latent values".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::InvalidArgument(format!("label {l} out of range for K={n_classes}")));
        }
        members[l].push(i);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(Error::Fit(format!("class {empty} has no samples")));
    }

    let mut centers = Array2::<f64>::zeros((n_classes, m));
    for (c, ids) in members.iter().enumerate() {
        let sel = latents.select(Axis(1), ids);
        centers.row_mut(c).assign(&sel.mean_axis(Axis(1)).expect("nonempty"));
    }

    let mut pairs = Vec::with_capacity(n_classes * (n_classes - 1) / 2);
    for a in 0..n_classes {
        for b in (a + 1)..n_classes {
            let ids: Vec<usize> = members[a].iter().chain(&members[b]).copied().collect();
            let x = latents.select(Axis(1), &ids).reversed_axes();
            let y: Vec<f64> = ids.iter().map(|&i| if labels[i] == b { 1.0 } else { -1.0 }).collect();
            let pair_seed = params.seed ^ ((a as u64) << 32 | b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
            let (w, bias) = pegasos(&x, &y, params.lambda, params.epochs, &mut rng);
            pairs.push(PairModel { a, b, w, bias });
        }
    }
    Ok(SvmModel { n_classes, pairs, centers, lambda: params.lambda })
}

impl SvmModel {
    pub fn latent_dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn pair(&self, a: usize, b: usize) -> Result<&PairModel> {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if a == b || hi >= self.n_classes {
            return Err(Error::InvalidArgument(format!("unknown class pair ({a}, {b})")));
        }
        Ok(&self.pairs[pair_index(self.n_classes, lo, hi)])
    }

    fn check_dim(&self, z: ArrayView1<'_, f64>) -> Result<()> {
        if z.len() != self.latent_dim() {
            return Err(Error::Shape(format!("latent has length {}, model expects {}", z.len(), self.latent_dim())));
        }
        Ok(())
    }

    /// Decision value of the pair, oriented so that positive means "toward `b`".
    pub fn decision_value(&self, a: usize, b: usize, z: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_dim(z)?;
        let p = self.pair(a, b)?;
        let v = p.value(z);
        Ok(if a < b { v } else { -v })
    }

    /// One-vs-one vote; ties go to the larger summed `|f|` of won pairs, then the lowest index.
    pub fn predict(&self, z: ArrayView1<'_, f64>) -> Result<usize> {
        self.check_dim(z)?;
        let k = self.n_classes;
        let mut votes = vec![0usize; k];
        let mut strength = vec![0.0f64; k];
        for p in &self.pairs {
            let f = p.value(z);
            let winner = if f > 0.0 { p.b } else { p.a };
            votes[winner] += 1;
            strength[winner] += f.abs();
        }
        let mut best = 0;
        for c in 1..k {
            if votes[c] > votes[best] || (votes[c] == votes[best] && strength[c] > strength[best]) {
                best = c;
            }
        }
        Ok(best)
    }

    /// `(f(z) − f(c_a)) / (f(c_b) − f(c_a))` before clamping; 0 at `c_a`, 1 at `c_b`.
    pub fn raw_normalized_score(&self, a: usize, b: usize, z: ArrayView1<'_, f64>) -> Result<f64> {
        let fz = self.decision_value(a, b, z)?;
        let fa = self.decision_value(a, b, self.centers.row(a))?;
        let fb = self.decision_value(a, b, self.centers.row(b))?;
        let span = fb - fa;
        if !(span.abs() > f64::EPSILON * (fa.abs() + fb.abs()).max(1e-300)) {
            return Err(Error::Scoring(format!("centers of classes {a} and {b} have equal decision values")));
        }
        Ok((fz - fa) / span)
    }

    /// Score of `z` toward `b` on the pair `(a, b)`, clamped into `[0, 1]`.
    pub fn normalized_score(&self, a: usize, b: usize, z: ArrayView1<'_, f64>) -> Result<f64> {
        Ok(self.raw_normalized_score(a, b, z)?.clamp(0.0, 1.0))
    }

    /// Per-class score: the best normalized score of the class over all its pairs.
    pub fn class_scores(&self, z: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        let mut scores = vec![0.0f64; self.n_classes];
        for p in &self.pairs {
            let s = self.normalized_score(p.a, p.b, z)?;
            scores[p.b] = scores[p.b].max(s);
            scores[p.a] = scores[p.a].max(1.0 - s);
        }
        Ok(scores)
    }
}

/// Encodes the labeled samples of `ds` and fits an SVM on them.
pub fn fit_on_labeled(sae: &SaeModel<f32>, ds: &Dataset, params: &SvmParams) -> Result<SvmModel> {
    let ids = ds.labeled_ids();
    let z = encode_ids(sae, ds, &ids)?;
    svm_fit(z.view(), &ds.labeled_classes(), ds.n_classes(), params)
}

/// Predicted classes for the given samples.
pub fn predict_ids(svm: &SvmModel, sae: &SaeModel<f32>, ds: &Dataset, ids: &[usize]) -> Result<Vec<usize>> {
    let z = encode_ids(sae, ds, ids)?;
    z.axis_iter(Axis(1)).map(|c| svm.predict(c)).collect()
}

/// Fraction of samples with a superclass whose prediction is wrong.
pub fn classification_error(svm: &SvmModel, sae: &SaeModel<f32>, ds: &Dataset) -> Result<f64> {
    let ids: Vec<usize> = (0..ds.len()).filter(|&i| ds.superclass(i).is_some()).collect();
    if ids.is_empty() {
        return Err(Error::InvalidArgument("no samples with a class to evaluate".into()));
    }
    let pred = predict_ids(svm, sae, ds, &ids)?;
    let wrong = ids.iter().zip(&pred).filter(|(&i, &p)| ds.superclass(i) != Some(p)).count();
    Ok(wrong as f64 / ids.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub score_lo: f64,
    pub score_hi: f64,
    pub count: usize,
    /// Fraction of positives; `None` for empty bins.
    pub precision: Option<f64>,
}

fn bin_of(s: f64, n_bins: usize) -> usize {
    ((s * n_bins as f64).floor() as usize).min(n_bins - 1)
}

/// Equal-width reliability bins over `[0, 1]`.
pub fn calibration_curve(scores: &[f64], truths: &[bool], n_bins: usize) -> Result<Vec<CalibrationBin>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores".into()));
    }
    if scores.len() != truths.len() {
        return Err(Error::Shape(format!("{} scores but {} truths", scores.len(), truths.len())));
    }
    if n_bins < 2 {
        return Err(Error::InvalidArgument("need at least two bins".into()));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidArgument(format!("score {s} outside [0, 1]")));
    }
    let mut count = vec![0usize; n_bins];
    let mut pos = vec![0usize; n_bins];
    for (&s, &t) in scores.iter().zip(truths) {
        let b = bin_of(s, n_bins);
        count[b] += 1;
        pos[b] += usize::from(t);
    }
    Ok((0..n_bins)
        .map(|b| CalibrationBin {
            score_lo: b as f64 / n_bins as f64,
            score_hi: (b + 1) as f64 / n_bins as f64,
            count: count[b],
            precision: (count[b] > 0).then(|| pos[b] as f64 / count[b] as f64),
        })
        .collect())
}

/// Equal-width histogram over `[0, 1]`; out-of-range scores are clamped to the end bins.
pub fn score_histogram(scores: &[f64], n_bins: usize) -> Vec<usize> {
    let mut h = vec![0usize; n_bins];
    if n_bins == 0 {
        return h;
    }
    for &s in scores {
        h[bin_of(s.clamp(0.0, 1.0), n_bins)] += 1;
    }
    h
}

/// Weighted least-squares non-decreasing fit (pool-adjacent-violators).
pub fn isotonic(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // blocks of (mean, weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            let m = if w > 0.0 { (m1 * w1 + m2 * w2) / w } else { 0.5 * (m1 + m2) };
            *blocks.last_mut().unwrap() = (m, w, l1 + l2);
        }
    }
    blocks.into_iter().flat_map(|(m, _, l)| std::iter::repeat_n(m, l)).collect()
}

/// Isotonic smoothing of the non-empty bins of a calibration curve, weighted by count.
pub fn smoothed_precision(bins: &[CalibrationBin]) -> Vec<f64> {
    let (v, w): (Vec<f64>, Vec<f64>) = bins.iter().filter_map(|b| b.precision.map(|p| (p, b.count as f64))).unzip();
    isotonic(&v, &w)
}
