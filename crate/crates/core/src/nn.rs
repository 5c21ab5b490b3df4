//! Dense layers and multilayer perceptrons with hand-written backpropagation.
//!
//! Batches are column-major in the mathematical sense: an input is `in × n`,
//! one column per sample, and a layer computes `act(W·X + b·1ᵀ)`.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type a network can be instantiated with (`f32` for training, `f64` for checks).
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + LinalgScalar
        + ScalarOperand
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + 'static
{
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply<F: Real>(self, a: &mut Array2<F>) {
        match self {
            Activation::Relu => a.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() }),
            Activation::Sigmoid => a.mapv_inplace(|v| F::one() / (F::one() + (-v).exp())),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the activation derivative, expressed through the layer output.
    fn backprop<F: Real>(self, out: &Array2<F>, grad: &mut Array2<F>) {
        match self {
            Activation::Relu => grad.zip_mut_with(out, |g, &o| {
                if o <= F::zero() {
                    *g = F::zero();
                }
            }),
            Activation::Sigmoid => grad.zip_mut_with(out, |g, &o| *g *= o * (F::one() - o)),
            Activation::Identity => {}
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    /// `out × in`
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> Dense<F> {
    /// Uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_out, fan_in), || F::of(rng.random_range(-limit..limit)));
        Dense { w, b: Array1::zeros(fan_out), activation }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Dense { w: Array2::zeros((fan_out, fan_in)), b: Array1::zeros(fan_out), activation }
    }

    pub fn fan_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Array2<F> {
        let mut h = self.w.dot(&x);
        h += &self.b.view().insert_axis(Axis(1));
        self.activation.apply(&mut h);
        h
    }

    /// Given the layer input, its output and `∂L/∂out`, returns the parameter
    /// gradients and `∂L/∂input`.
    pub fn backward(&self, input: ArrayView2<'_, F>, out: &Array2<F>, mut grad_out: Array2<F>) -> (DenseGrad<F>, Array2<F>) {
        self.activation.backprop(out, &mut grad_out);
        let gw = grad_out.dot(&input.t());
        let gb = grad_out.sum_axis(Axis(1));
        let gin = self.w.t().dot(&grad_out);
        (DenseGrad { w: gw, b: gb }, gin)
    }

    pub fn param_slices_mut(&mut self) -> [&mut [F]; 2] {
        [self.w.as_slice_mut().expect("standard layout"), self.b.as_slice_mut().expect("standard layout")]
    }

    pub fn param_slices(&self) -> [&[F]; 2] {
        [self.w.as_slice().expect("standard layout"), self.b.as_slice().expect("standard layout")]
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

impl<F: Real> DenseGrad<F> {
    pub fn slices(&self) -> [&[F]; 2] {
        [self.w.as_slice().expect("standard layout"), self.b.as_slice().expect("standard layout")]
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
}

impl<F: Real> Mlp<F> {
    /// Layers `dims[i] → dims[i+1]`; `hidden` on all but the last, `last` on the last.
    pub fn glorot<R: Rng>(dims: &[usize], hidden: Activation, last: Activation, rng: &mut R) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n).map(|i| Dense::glorot(dims[i], dims[i + 1], if i + 1 == n { last } else { hidden }, rng)).collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").fan_out()
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::Shape(format!("input has {} rows, network expects {}", x.nrows(), self.input_dim())));
        }
        let mut a = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            a = layer.forward(a.view());
        }
        Ok(a)
    }

    /// Forward pass keeping every layer output (`outputs[i]` is the output of layer `i`).
    pub fn forward_cached(&self, x: ArrayView2<'_, F>) -> Result<Vec<Array2<F>>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::Shape(format!("input has {} rows, network expects {}", x.nrows(), self.input_dim())));
        }
        let mut outputs: Vec<Array2<F>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = if i == 0 { layer.forward(x) } else { layer.forward(outputs[i - 1].view()) };
            outputs.push(out);
        }
        Ok(outputs)
    }

    /// Backpropagates `∂L/∂output` through the cached pass; returns per-layer
    /// gradients and `∂L/∂x`.
    pub fn backward(&self, x: ArrayView2<'_, F>, outputs: &[Array2<F>], grad_out: Array2<F>) -> (Vec<DenseGrad<F>>, Array2<F>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = if i == 0 { x.view() } else { outputs[i - 1].view() };
            let (lg, gin) = layer.backward(input, &outputs[i], g);
            grads.push(lg);
            g = gin;
        }
        grads.reverse();
        (grads, g)
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        self.layers.iter_mut().flat_map(|l| l.param_slices_mut()).collect()
    }

    pub fn param_slices(&self) -> Vec<&[F]> {
        self.layers.iter().flat_map(|l| l.param_slices()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub fn cast<G: Real>(&self) -> Mlp<G> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    w: l.w.mapv(|v| G::of(v.to_f64().unwrap())),
                    b: l.b.mapv(|v| G::of(v.to_f64().unwrap())),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}
