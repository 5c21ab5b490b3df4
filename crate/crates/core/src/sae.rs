//! The structuring autoencoder: an MLP encoder/decoder pair trained on
//! `γ·L_S + (1−γ)·L_AE` for labeled samples and `L_AE` for unlabeled ones.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{self, AlignmentResult};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mds::{self, DistanceSpec, SmacofOptions};
use crate::nn::{Activation, DenseGrad, Mlp, Real};
use crate::optim::{Optimizer, OptimizerKind};

/// Encoder layer sizes from input to latent; the decoder mirrors them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    /// Decoder output activation: `sigmoid` for `[0,1]` images, `identity` for raw vectors.
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, output: Activation) -> Result<Self> {
        let spec = MlpSpec { layer_dims, output };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidArgument("an MLP spec needs at least input and latent sizes".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        if self.output == Activation::Relu {
            return Err(Error::InvalidArgument("output activation must be sigmoid or identity".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        self.layer_dims.iter().rev().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel<F = f32> {
    pub spec: MlpSpec,
    pub encoder: Mlp<F>,
    pub decoder: Mlp<F>,
}

/// Gradient set shaped like [`SaeModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub encoder: Vec<DenseGrad<F>>,
    pub decoder: Vec<DenseGrad<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn slices(&self) -> Vec<&[F]> {
        self.encoder.iter().chain(&self.decoder).flat_map(|g| g.slices()).collect()
    }
}

/// Desired latent positions for the labeled columns of a batch.
#[derive(Debug, Clone, Copy)]
pub struct LatentTargets<'a, F> {
    /// `m × n`; columns with `mask[j] == false` are ignored.
    pub ztilde: ArrayView2<'a, F>,
    pub mask: &'a [bool],
}

/// Batch-mean losses of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLoss {
    pub n: usize,
    pub labeled: usize,
    /// Mean `L_AE` over the batch.
    pub recon: f64,
    /// Mean `L_S` over the labeled columns (zero when there are none).
    pub structural: f64,
    /// Mean of the per-sample combined loss.
    pub combined: f64,
    /// Σ‖x − x̂‖² over the batch, for RMSE bookkeeping.
    pub sq_error: f64,
}

/// Seeded initialization; see [`crate::nn::Dense::glorot`].
pub fn init_model<F: Real>(spec: &MlpSpec, seed: u64) -> Result<SaeModel<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Mlp::glorot(&spec.layer_dims, Activation::Relu, Activation::Identity, &mut rng);
    let decoder = Mlp::glorot(&spec.decoder_dims(), Activation::Relu, spec.output, &mut rng);
    Ok(SaeModel { spec: spec.clone(), encoder, decoder })
}

impl<F: Real> SaeModel<F> {
    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim()
    }

    /// `X` is `dim × n`; returns `Z` as `m × n`.
    pub fn encode(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.encoder.forward(x)
    }

    pub fn decode(&self, z: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.decoder.forward(z)
    }

    pub fn reconstruct(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.decode(self.encode(x)?.view())
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut v = self.encoder.param_slices_mut();
        v.extend(self.decoder.param_slices_mut());
        v
    }

    pub fn param_slices(&self) -> Vec<&[F]> {
        let mut v = self.encoder.param_slices();
        v.extend(self.decoder.param_slices());
        v
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.decoder.is_finite()
    }

    pub fn cast<G: Real>(&self) -> SaeModel<G> {
        SaeModel { spec: self.spec.clone(), encoder: self.encoder.cast(), decoder: self.decoder.cast() }
    }

    /// Batch losses without gradients.
    pub fn losses(&self, x: ArrayView2<'_, F>, targets: Option<LatentTargets<'_, F>>, gamma: f64) -> Result<BatchLoss> {
        let z = self.encode(x)?;
        let xhat = self.decode(z.view())?;
        batch_loss(x, xhat.view(), z.view(), targets, gamma)
    }

    /// Exact gradients of the batch-mean combined loss.
    pub fn gradients(&self, x: ArrayView2<'_, F>, targets: Option<LatentTargets<'_, F>>, gamma: f64) -> Result<(Gradients<F>, BatchLoss)> {
        check_gamma(gamma)?;
        let n = x.ncols();
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if let Some(t) = &targets {
            check_targets(t, self.latent_dim(), n)?;
        }
        let enc_out = self.encoder.forward_cached(x)?;
        let z = enc_out.last().expect("encoder has layers");
        let dec_out = self.decoder.forward_cached(z.view())?;
        let xhat = dec_out.last().expect("decoder has layers");

        let loss = batch_loss(x, xhat.view(), z.view(), targets, gamma)?;
        if !loss.combined.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }

        let g = F::of(gamma);
        let two_over_n = F::of(2.0 / n as f64);
        let mut grad_xhat = xhat - &x;
        grad_xhat.mapv_inplace(|v| v * two_over_n);
        if let Some(t) = &targets {
            let keep = F::one() - g;
            for (mut col, &labeled) in grad_xhat.axis_iter_mut(Axis(1)).zip(t.mask) {
                if labeled {
                    col.mapv_inplace(|v| v * keep);
                }
            }
        }
        let (dec_grads, mut grad_z) = self.decoder.backward(z.view(), &dec_out, grad_xhat);
        if let Some(t) = &targets {
            let scale = g * two_over_n;
            for (j, &labeled) in t.mask.iter().enumerate() {
                if labeled {
                    let mut col = grad_z.column_mut(j);
                    for ((gz, &zv), &tv) in col.iter_mut().zip(z.column(j)).zip(t.ztilde.column(j)) {
                        *gz += scale * (zv - tv);
                    }
                }
            }
        }
        let (enc_grads, _) = self.encoder.backward(x, &enc_out, grad_z);
        Ok((Gradients { encoder: enc_grads, decoder: dec_grads }, loss))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    Ok(())
}

fn check_targets<F>(t: &LatentTargets<'_, F>, m: usize, n: usize) -> Result<()> {
    if t.ztilde.dim() != (m, n) || t.mask.len() != n {
        return Err(Error::Shape(format!("targets are {:?} with {} mask entries, expected ({m}, {n})", t.ztilde.dim(), t.mask.len())));
    }
    Ok(())
}

fn sq_dist<F: Real>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).to_f64().unwrap();
            d * d
        })
        .sum()
}

/// Reconstruction loss `‖x − x̂‖²`.
pub fn loss_ae<F: Real>(x: ArrayView1<'_, F>, xhat: ArrayView1<'_, F>) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::Shape(format!("lengths {} and {} differ", x.len(), xhat.len())));
    }
    Ok(sq_dist(x, xhat))
}

/// Structural loss `‖z − z̃‖²`.
pub fn loss_structural<F: Real>(z: ArrayView1<'_, F>, ztilde: ArrayView1<'_, F>) -> Result<f64> {
    if z.len() != ztilde.len() {
        return Err(Error::Shape(format!("lengths {} and {} differ", z.len(), ztilde.len())));
    }
    Ok(sq_dist(z, ztilde))
}

/// Per-sample loss: `γ·L_S + (1−γ)·L_AE` with a target, `L_AE` without.
pub fn loss_combined<F: Real>(
    x: ArrayView1<'_, F>,
    xhat: ArrayView1<'_, F>,
    z: ArrayView1<'_, F>,
    ztilde: Option<ArrayView1<'_, F>>,
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    let ae = loss_ae(x, xhat)?;
    match ztilde {
        Some(t) => Ok(gamma * loss_structural(z, t)? + (1.0 - gamma) * ae),
        None => Ok(ae),
    }
}

fn batch_loss<F: Real>(
    x: ArrayView2<'_, F>,
    xhat: ArrayView2<'_, F>,
    z: ArrayView2<'_, F>,
    targets: Option<LatentTargets<'_, F>>,
    gamma: f64,
) -> Result<BatchLoss> {
    check_gamma(gamma)?;
    let n = x.ncols();
    let mut out = BatchLoss { n, ..Default::default() };
    let mut combined = 0.0;
    for j in 0..n {
        let ae = loss_ae(x.column(j), xhat.column(j))?;
        out.sq_error += ae;
        let labeled = targets.as_ref().is_some_and(|t| t.mask[j]);
        if labeled {
            let t = targets.as_ref().unwrap();
            let s = loss_structural(z.column(j), t.ztilde.column(j))?;
            out.structural += s;
            out.labeled += 1;
            combined += gamma * s + (1.0 - gamma) * ae;
        } else {
            combined += ae;
        }
    }
    out.recon = out.sq_error / n as f64;
    out.combined = combined / n as f64;
    if out.labeled > 0 {
        out.structural /= out.labeled as f64;
    }
    Ok(out)
}

/// Alignment sub-configuration (thresholds of the pinv/SVD rotation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub flatten_rcond: f64,
    pub pinv_rcond: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { flatten_rcond: align::FLATTEN_RCOND, pinv_rcond: align::PINV_RCOND }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub mds: SmacofOptions,
    pub align: AlignConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.5,
            learning_rate: 0.05,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            mds: SmacofOptions::default(),
            align: AlignConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Per-element RMSE between inputs and reconstructions over the epoch.
    pub recon_rmse: f64,
    /// Mean `L_AE` per sample.
    pub recon_loss: f64,
    /// Mean `L_S` over labeled samples.
    pub structural_loss: f64,
    /// Mean per-sample combined loss.
    pub combined_loss: f64,
    pub labeled: usize,
    pub mds_stress: Option<f64>,
    pub alignment_residual: Option<f64>,
}

/// Sample order of one epoch; a pure function of `(seed, epoch, n)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Targets of the current epoch, one column per labeled id.
#[derive(Debug, Clone)]
pub struct EpochTargets {
    pub ids: Vec<usize>,
    pub ztilde: Array2<f64>,
    pub alignment: AlignmentResult,
    pub stress: f64,
}

/// Encodes the given samples (chunked) into an `m × len(ids)` matrix.
pub fn encode_ids(model: &SaeModel<f32>, ds: &Dataset, ids: &[usize]) -> Result<Array2<f64>> {
    const CHUNK: usize = 2048;
    let mut z = Array2::<f64>::zeros((model.latent_dim(), ids.len()));
    for (c, chunk) in ids.chunks(CHUNK).enumerate() {
        let x = ds.rows(chunk);
        let zc = model.encode(x.t())?;
        z.slice_mut(ndarray::s![.., c * CHUNK..c * CHUNK + chunk.len()]).assign(&zc.mapv(f64::from));
    }
    Ok(z)
}

/// Per-element reconstruction RMSE over the given samples.
pub fn reconstruction_rmse(model: &SaeModel<f32>, ds: &Dataset, ids: &[usize]) -> Result<f64> {
    const CHUNK: usize = 2048;
    let mut sq = 0.0;
    for chunk in ids.chunks(CHUNK) {
        let x = ds.rows(chunk);
        let xhat = model.reconstruct(x.t())?;
        sq += x.t().iter().zip(xhat.iter()).map(|(&a, &b)| f64::from(a - b).powi(2)).sum::<f64>();
    }
    Ok((sq / (ids.len() * ds.dim()).max(1) as f64).sqrt())
}

/// Computes `Z̃` for the labeled samples: encode, solve class targets, rotate onto `Z`.
pub fn compute_targets(model: &SaeModel<f32>, ds: &Dataset, spec: &DistanceSpec, cfg: &TrainConfig) -> Result<EpochTargets> {
    let ids = ds.labeled_ids();
    let labels = ds.labeled_classes();
    if spec.k() != ds.n_classes() {
        return Err(Error::Consistency(format!("distance spec has K={}, dataset has K={}", spec.k(), ds.n_classes())));
    }
    let z = encode_ids(model, ds, &ids)?;
    let targets = mds::per_sample_targets(z.view(), &labels, spec, &cfg.mds)?;
    let alignment = align::ideal_rotation_with(z.view(), targets.zstar.view(), cfg.align.pinv_rcond, cfg.align.flatten_rcond)?;
    let ztilde = align::place_targets(alignment.r.view(), targets.zstar.view())?;
    Ok(EpochTargets { ids, ztilde, alignment, stress: targets.report.final_stress })
}

/// Stateful epoch loop. Targets are refreshed at the start of every epoch and
/// held fixed within it.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: SaeModel<f32>,
    optimizer: Optimizer<f32>,
    spec: DistanceSpec,
    cfg: TrainConfig,
    epoch: usize,
    history: Vec<EpochMetrics>,
}

impl Trainer {
    pub fn new(model: SaeModel<f32>, spec: DistanceSpec, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
        Ok(Trainer { model, optimizer, spec, cfg, epoch: 0, history: Vec::new() })
    }

    pub fn model(&self) -> &SaeModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> SaeModel<f32> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &DistanceSpec {
        &self.spec
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    /// Replaces the model and resets the optimizer state (cold restart).
    pub fn reset_model(&mut self, model: SaeModel<f32>) {
        self.model = model;
        self.optimizer = Optimizer::new(self.cfg.optimizer, self.cfg.learning_rate);
    }

    pub fn run_epoch(&mut self, ds: &Dataset) -> Result<EpochMetrics> {
        if ds.dim() != self.model.input_dim() {
            return Err(Error::Shape(format!("dataset dim {} vs model input {}", ds.dim(), self.model.input_dim())));
        }
        let m = self.model.latent_dim();
        let n = ds.len();
        let structured = self.cfg.gamma > 0.0 && ds.labeled_count() > 0;
        let targets = if structured { Some(compute_targets(&self.model, ds, &self.spec, &self.cfg)?) } else { None };

        // id -> column of the target matrix
        let mut target_col = vec![usize::MAX; n];
        if let Some(t) = &targets {
            for (col, &id) in t.ids.iter().enumerate() {
                target_col[id] = col;
            }
        }
        let ztilde32 = targets.as_ref().map(|t| t.ztilde.mapv(|v| v as f32));

        let order = epoch_order(self.cfg.seed, self.epoch, n);
        let mut sq_error = 0.0;
        let mut recon = 0.0;
        let mut structural = 0.0;
        let mut combined = 0.0;
        let mut labeled = 0usize;
        for batch in order.chunks(self.cfg.batch_size) {
            let x = ds.rows(batch);
            let (grads, loss) = match &ztilde32 {
                Some(zt) => {
                    let mask: Vec<bool> = batch.iter().map(|&id| target_col[id] != usize::MAX).collect();
                    let mut bt = Array2::<f32>::zeros((m, batch.len()));
                    for (j, &id) in batch.iter().enumerate() {
                        if mask[j] {
                            bt.column_mut(j).assign(&zt.column(target_col[id]));
                        }
                    }
                    let t = LatentTargets { ztilde: bt.view(), mask: &mask };
                    self.model.gradients(x.t(), Some(t), self.cfg.gamma)
                }
                None => self.model.gradients(x.t(), None, self.cfg.gamma),
            }
            .map_err(|e| Error::Diverged { epoch: self.epoch, reason: e.to_string() })?;
            self.optimizer.step(self.model.param_slices_mut(), grads.slices());

            sq_error += loss.sq_error;
            recon += loss.recon * loss.n as f64;
            structural += loss.structural * loss.labeled as f64;
            combined += loss.combined * loss.n as f64;
            labeled += loss.labeled;
        }
        if !self.model.is_finite() {
            return Err(Error::Diverged { epoch: self.epoch, reason: "non-finite parameters".into() });
        }
        let metrics = EpochMetrics {
            epoch: self.epoch,
            recon_rmse: (sq_error / (n * ds.dim()) as f64).sqrt(),
            recon_loss: recon / n as f64,
            structural_loss: if labeled > 0 { structural / labeled as f64 } else { 0.0 },
            combined_loss: combined / n as f64,
            labeled,
            mds_stress: targets.as_ref().map(|t| t.stress),
            alignment_residual: targets.as_ref().map(|t| t.alignment.residual),
        };
        self.epoch += 1;
        self.history.push(metrics.clone());
        Ok(metrics)
    }
}

/// Runs `cfg.epochs` epochs from `model`, reporting each epoch to `on_epoch`.
pub fn train(
    model: SaeModel<f32>,
    ds: &Dataset,
    spec: &DistanceSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(SaeModel<f32>, Vec<EpochMetrics>)> {
    let mut trainer = Trainer::new(model, spec.clone(), cfg.clone())?;
    for _ in 0..cfg.epochs {
        let m = trainer.run_epoch(ds)?;
        on_epoch(&m);
    }
    let history = trainer.history().to_vec();
    Ok((trainer.into_model(), history))
}
