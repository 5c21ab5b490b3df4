//! First-order parameter updates over flat parameter slices.

use serde::{Deserialize, Serialize};

use crate::nn::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain SGD with a fixed learning rate.
    #[default]
    Sgd,
    /// Heavy-ball momentum, β = 0.9.
    Momentum,
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    Adam,
}

const MOMENTUM: f64 = 0.9;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    kind: OptimizerKind,
    lr: F,
    step: i32,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Real> Optimizer<F> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer { kind, lr: F::of(learning_rate), step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update. `params` and `grads` must list the same slices in the same order.
    pub fn step(&mut self, params: Vec<&mut [F]>, grads: Vec<&[F]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.first.is_empty() && self.kind != OptimizerKind::Sgd {
            self.first = grads.iter().map(|g| vec![F::zero(); g.len()]).collect();
            if self.kind == OptimizerKind::Adam {
                self.second = self.first.clone();
            }
        }
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (pv, &gv) in p.iter_mut().zip(g) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Momentum => {
                let beta = F::of(MOMENTUM);
                for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.first) {
                    for ((pv, &gv), vv) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vv = beta * *vv + gv;
                        *pv -= lr * *vv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (F::of(BETA1), F::of(BETA2), F::of(EPS));
                let c1 = F::one() - b1.powi(self.step);
                let c2 = F::one() - b2.powi(self.step);
                let step_size = lr * c2.sqrt() / c1;
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for (((pv, &gv), mv), vv) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mv = b1 * *mv + (F::one() - b1) * gv;
                        *vv = b2 * *vv + (F::one() - b2) * gv * gv;
                        *pv -= step_size * *mv / (vv.sqrt() + eps);
                    }
                }
            }
        }
    }
}
