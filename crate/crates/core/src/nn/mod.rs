//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! All parameters of a network live in one flat buffer, laid out layer by
//! layer as a row-major `outputs x inputs` weight block followed by the bias
//! vector. Gradients and optimizer moments share that layout, which keeps the
//! optimizer, target-network blending and snapshots trivial.

mod adamax;
mod loss;
mod snapshot;

pub use adamax::{Adamax, ADAMAX_BETA1, ADAMAX_BETA2, ADAMAX_EPS};
pub use loss::{gaussian_nll_loss, mse_loss, softmax, GaussianHead, NllGradient, SIGMA_FLOOR};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("standard deviation {value} below floor {floor}")]
    StddevBelowFloor { value: f64, floor: f64 },
    #[error("invalid snapshot: {0}")]
    Snapshot(String),
    #[error("incompatible layer shapes")]
    ShapeMismatch,
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
            Activation::Softplus => softplus(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
            Activation::Softplus => sigmoid(z),
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
            Activation::Softplus => 3,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Identity,
            3 => Activation::Softplus,
            _ => return None,
        })
    }
}

/// Numerically stable `ln(1 + e^z)`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    offset: usize,
}

impl LayerShape {
    fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Gradient of a scalar loss with respect to every parameter of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients(vec![0.0; net.params.len()])
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|g| *g == 0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

/// A fully-connected network together with its Adamax optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
    optimizer: Adamax,
}

impl Mlp {
    /// Builds a network from layer widths `sizes` (input first). Hidden
    /// layers use `hidden`, the last layer uses `output`. Weights and biases
    /// are drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least one layer");
        let mut activations = vec![hidden; sizes.len() - 2];
        activations.push(output);
        let mut net = Self::zeros(sizes, &activations);
        for layer in net.layers.clone() {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for p in &mut net.params[layer.offset..layer.offset + layer.param_count()] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        net
    }

    /// All-zero network with one activation per layer.
    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Self {
        assert_eq!(sizes.len(), activations.len() + 1);
        let mut layers = Vec::with_capacity(activations.len());
        let mut offset = 0;
        for (i, &activation) in activations.iter().enumerate() {
            let layer = LayerShape {
                inputs: sizes[i],
                outputs: sizes[i + 1],
                activation,
                offset,
            };
            offset += layer.param_count();
            layers.push(layer);
        }
        Mlp {
            layers,
            optimizer: Adamax::new(offset),
            params: vec![0.0; offset],
        }
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn optimizer(&self) -> &Adamax {
        &self.optimizer
    }

    /// Mutable weight block of layer `i`, row-major `outputs x inputs`.
    pub fn weights_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layers[i].weight_range();
        &mut self.params[r]
    }

    pub fn bias_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layers[i].bias_range();
        &mut self.params[r]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.params[self.layers[i].weight_range()]
    }

    pub fn bias(&self, i: usize) -> &[f64] {
        &self.params[self.layers[i].bias_range()]
    }

    /// Raw access for finite-difference checks and tests.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_width() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_width(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn layer_forward(&self, layer: &LayerShape, x: &[f64], pre: &mut Vec<f64>, out: &mut Vec<f64>) {
        let w = &self.params[layer.weight_range()];
        let b = &self.params[layer.bias_range()];
        pre.clear();
        out.clear();
        for (row, bias) in w.chunks_exact(layer.inputs).zip(b) {
            let z = bias + dot(row, x);
            pre.push(z);
            out.push(layer.activation.apply(z));
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut pre = Vec::new();
        let mut out = Vec::new();
        for layer in &self.layers {
            self.layer_forward(layer, &x, &mut pre, &mut out);
            std::mem::swap(&mut x, &mut out);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for layer in &self.layers {
            let mut pre = Vec::with_capacity(layer.outputs);
            let mut out = Vec::with_capacity(layer.outputs);
            self.layer_forward(layer, activations.last().unwrap(), &mut pre, &mut out);
            pre_activations.push(pre);
            activations.push(out);
        }
        Ok(Trace {
            activations,
            pre_activations,
        })
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`
    /// and returns `d loss / d input`.
    pub fn backward_into(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_width() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_width(),
                got: upstream.len(),
            });
        }
        if grads.0.len() != self.params.len() {
            return Err(NnError::DimensionMismatch {
                expected: self.params.len(),
                got: grads.0.len(),
            });
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre_activations[i];
            let out = &trace.activations[i + 1];
            let input = &trace.activations[i];
            for ((d, &z), &y) in delta.iter_mut().zip(pre).zip(out) {
                *d *= layer.activation.derivative(z, y);
            }
            let w = &self.params[layer.weight_range()];
            let (gw, gb) = grads.0[layer.offset..layer.offset + layer.param_count()]
                .split_at_mut(layer.inputs * layer.outputs);
            for (row_grad, &d) in gw.chunks_exact_mut(layer.inputs).zip(&delta) {
                if d != 0.0 {
                    for (g, &x) in row_grad.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            for (g, &d) in gb.iter_mut().zip(&delta) {
                *g += d;
            }
            let mut next = vec![0.0; layer.inputs];
            for (row, &d) in w.chunks_exact(layer.inputs).zip(&delta) {
                if d != 0.0 {
                    for (n, &wv) in next.iter_mut().zip(row) {
                        *n += d * wv;
                    }
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Gradients of `upstream · f(input)` with respect to every parameter.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let trace = self.forward_trace(input)?;
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(&trace, upstream, &mut grads)?;
        Ok(grads)
    }

    /// One Adamax update. Parameters are left untouched if the update would
    /// produce non-finite values.
    pub fn adamax_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if grads.0.len() != self.params.len() {
            return Err(NnError::DimensionMismatch {
                expected: self.params.len(),
                got: grads.0.len(),
            });
        }
        self.optimizer.step(&mut self.params, &grads.0, learning_rate)
    }

    fn check_same_shape(&self, other: &Mlp) -> Result<()> {
        if self.layers != other.layers {
            return Err(NnError::ShapeMismatch);
        }
        Ok(())
    }

    /// `self <- tau * self + (1 - tau) * source`.
    pub fn blend_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        self.check_same_shape(source)?;
        for (t, &s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * *t + (1.0 - tau) * s;
        }
        Ok(())
    }

    /// Exact parameter copy; optimizer state of `self` is kept.
    pub fn copy_params_from(&mut self, source: &Mlp) -> Result<()> {
        self.check_same_shape(source)?;
        self.params.copy_from_slice(&source.params);
        Ok(())
    }

    /// L-infinity distance between the parameters of two equally shaped networks.
    pub fn max_abs_diff(&self, other: &Mlp) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(act: Activation) -> Mlp {
        let mut net = Mlp::zeros(&[2, 2], &[act]);
        net.weights_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        net
    }

    #[test]
    fn identity_forward() {
        let net = identity_layer(Activation::Identity);
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_forward() {
        let net = identity_layer(Activation::Relu);
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = identity_layer(Activation::Relu);
        assert_eq!(
            net.forward(&[1.0]),
            Err(NnError::DimensionMismatch { expected: 2, got: 1 })
        );
    }

    /// Independent forward pass written as explicit nested loops.
    fn reference_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for (i, layer) in net.layers().iter().enumerate() {
            let w = net.weights(i);
            let b = net.bias(i);
            let mut y = vec![0.0; layer.outputs];
            for r in 0..layer.outputs {
                let mut z = b[r];
                for c in 0..layer.inputs {
                    z += w[r * layer.inputs + c] * x[c];
                }
                y[r] = match layer.activation {
                    Activation::Relu => if z > 0.0 { z } else { 0.0 },
                    Activation::Tanh => z.tanh(),
                    Activation::Identity => z,
                    Activation::Softplus => (1.0 + z.exp()).ln(),
                };
            }
            x = y;
        }
        x
    }

    #[test]
    fn forward_matches_loop_oracle() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::new(&[5, 7, 3], Activation::Tanh, Activation::Identity, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = net.forward(&x).unwrap();
            let want = reference_forward(&net, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let mut net = Mlp::zeros(&[1, 1], &[Activation::Identity]);
        net.weights_mut(0)[0] = 0.7;
        let g = net.backward(&[3.5], &[1.0]).unwrap();
        assert_eq!(g.0, vec![3.5, 1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[4, 6, 2], Activation::Relu, Activation::Identity, &mut rng);
        let g = net.backward(&[0.1, -0.3, 0.9, 2.0], &[0.0, 0.0]).unwrap();
        assert!(g.is_zero());
        assert_eq!(g.0.len(), net.param_count());
    }

    #[test]
    fn backward_rejects_wrong_upstream() {
        let net = identity_layer(Activation::Identity);
        assert!(net.backward(&[1.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn blend_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng);
        let b = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng);
        let mut t = a.clone();
        t.blend_from(&b, 1.0).unwrap();
        assert_eq!(t.params(), a.params());
        t.blend_from(&b, 0.0).unwrap();
        assert_eq!(t.params(), b.params());
        assert_eq!(t.max_abs_diff(&b).unwrap(), 0.0);
        let other = Mlp::new(&[3, 5, 2], Activation::Relu, Activation::Identity, &mut rng);
        assert_eq!(t.blend_from(&other, 0.5), Err(NnError::ShapeMismatch));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((sigmoid(-800.0)).is_finite());
    }
}
