//! Supervised baseline: the SAE encoder architecture topped with a softmax
//! layer, trained by cross-entropy on the labeled samples only.

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Real};
use crate::optim::{Optimizer, OptimizerKind};
use crate::sae::epoch_order;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { epochs: 50, learning_rate: 1e-3, batch_size: 64, optimizer: OptimizerKind::Adam, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier<F = f32> {
    /// Encoder layers followed by a linear `m → K` logit layer.
    pub net: Mlp<F>,
}

fn softmax_columns<F: Real>(logits: &mut Array2<F>) {
    for mut col in logits.axis_iter_mut(Axis(1)) {
        let max = col.fold(F::neg_infinity(), |m, &v| m.max(v));
        col.mapv_inplace(|v| (v - max).exp());
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
}

impl<F: Real> SoftmaxClassifier<F> {
    /// `encoder_dims` runs from the input to the latent size.
    pub fn new(encoder_dims: &[usize], n_classes: usize, seed: u64) -> Result<Self> {
        if encoder_dims.len() < 2 || n_classes < 2 {
            return Err(Error::InvalidArgument("need an encoder with ≥ 2 sizes and ≥ 2 classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::glorot(encoder_dims, Activation::Relu, Activation::Identity, &mut rng);
        let m = *encoder_dims.last().unwrap();
        net.layers.extend(Mlp::glorot(&[m, n_classes], Activation::Identity, Activation::Identity, &mut rng).layers);
        Ok(SoftmaxClassifier { net })
    }

    pub fn n_classes(&self) -> usize {
        self.net.output_dim()
    }

    /// Class probabilities, `K × n`.
    pub fn predict_proba(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        let mut p = self.net.forward(x)?;
        softmax_columns(&mut p);
        Ok(p)
    }

    /// Mean cross-entropy of the batch and its parameter gradients.
    pub fn loss_and_gradients(&self, x: ArrayView2<'_, F>, labels: &[usize]) -> Result<(f64, Vec<crate::nn::DenseGrad<F>>)> {
        let n = x.ncols();
        if labels.len() != n || n == 0 {
            return Err(Error::Shape(format!("{n} columns but {} labels", labels.len())));
        }
        let outs = self.net.forward_cached(x)?;
        let mut p = outs.last().unwrap().clone();
        softmax_columns(&mut p);
        let mut loss = 0.0;
        let inv_n = F::of(1.0 / n as f64);
        for (j, &l) in labels.iter().enumerate() {
            if l >= self.n_classes() {
                return Err(Error::InvalidArgument(format!("label {l} out of range")));
            }
            loss -= p[[l, j]].to_f64().unwrap().max(1e-300).ln();
            p[[l, j]] -= F::one();
        }
        p.mapv_inplace(|v| v * inv_n);
        let (grads, _) = self.net.backward(x, &outs, p);
        Ok((loss / n as f64, grads))
    }
}

impl SoftmaxClassifier<f32> {
    /// Trains on the labeled samples of `ds`; returns the mean loss per epoch.
    pub fn fit(&mut self, ds: &Dataset, cfg: &ClassifierConfig) -> Result<Vec<f64>> {
        let ids = ds.labeled_ids();
        let labels = ds.labeled_classes();
        if ids.is_empty() {
            return Err(Error::Precondition("no labeled samples".into()));
        }
        let mut opt = Optimizer::<f32>::new(cfg.optimizer, cfg.learning_rate);
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let order = epoch_order(cfg.seed, epoch, ids.len());
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let bid: Vec<usize> = batch.iter().map(|&i| ids[i]).collect();
                let bl: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let x = ds.rows(&bid);
                let (loss, grads) = self.loss_and_gradients(x.t(), &bl)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, reason: "non-finite cross-entropy".into() });
                }
                total += loss * batch.len() as f64;
                let g: Vec<&[f32]> = grads.iter().flat_map(|g| g.slices()).collect();
                opt.step(self.net.param_slices_mut(), g);
            }
            history.push(total / ids.len() as f64);
        }
        Ok(history)
    }

    /// Probabilities for the given samples, `K × len(ids)`, computed in chunks.
    pub fn proba_ids(&self, ds: &Dataset, ids: &[usize]) -> Result<Array2<f32>> {
        const CHUNK: usize = 2048;
        let mut out = Array2::<f32>::zeros((self.n_classes(), ids.len()));
        for (c, chunk) in ids.chunks(CHUNK).enumerate() {
            let p = self.predict_proba(ds.rows(chunk).t())?;
            out.slice_mut(ndarray::s![.., c * CHUNK..c * CHUNK + chunk.len()]).assign(&p);
        }
        Ok(out)
    }

    /// Fraction of samples with a superclass whose argmax prediction is wrong.
    pub fn error(&self, ds: &Dataset) -> Result<f64> {
        let ids: Vec<usize> = (0..ds.len()).filter(|&i| ds.superclass(i).is_some()).collect();
        if ids.is_empty() {
            return Err(Error::InvalidArgument("no samples with a class to evaluate".into()));
        }
        let p = self.proba_ids(ds, &ids)?;
        let wrong = ids
            .iter()
            .zip(p.axis_iter(Axis(1)))
            .filter(|(&i, col)| {
                let arg = col.iter().enumerate().fold(0, |b, (c, &v)| if v > col[b] { c } else { b });
                ds.superclass(i) != Some(arg)
            })
            .count();
        Ok(wrong as f64 / ids.len() as f64)
    }
}
