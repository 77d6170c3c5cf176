//! A small hand-rolled multilayer perceptron: ReLU hidden layers, sigmoid
//! outputs, exact reverse-mode gradients for parameters *and* inputs.
//!
//! Both neural pieces of the system are instances of this one type — the
//! backbone (feature vector -> evidence activations) and the MLP variant of
//! the per-label conditional classifiers — so the backward pass is written
//! once and gradient-checked once.
//!
//! Weight matrices are row-major: `weights[l]` has shape
//! `dims[l+1] x dims[l]` and `weights[l][o * dims[l] + i]` connects input
//! `i` to output `o`. Shape mismatches panic; they are programmer errors.

use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths `[input, hidden..., output]`; `dims.len() >= 2`.
    /// With no hidden layers the net is a plain logistic map of its input.
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`Mlp::forward_trace`] for one input, consumed by
/// [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    input: Vec<f64>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activations per layer (ReLU for hidden, sigmoid for the last).
    act: Vec<Vec<f64>>,
}

impl MlpTrace {
    /// Network output (sigmoid activations of the last layer).
    pub fn output(&self) -> &[f64] {
        self.act.last().expect("trace has at least one layer")
    }
}

/// Gradients of a scalar loss with respect to every parameter and to the
/// network input, in the same shapes as the model.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: vec![0.0; net.dims[0]],
        }
    }

    /// Accumulates `other` into `self` (input gradient included).
    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.input.iter_mut().zip(&other.input) {
            *x += y;
        }
    }
}

impl Mlp {
    /// Fresh network with Glorot-uniform weights and zero biases, drawn from
    /// `rng` in a fixed order (layer by layer, row-major).
    pub fn new(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "Mlp needs at least [input, output] dims");
        assert!(dims.iter().all(|&d| d > 0), "zero-width layer");
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform_in(-limit, limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Forward pass returning the sigmoid outputs.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_trace(input).output().to_vec()
    }

    /// Forward pass that records everything [`Mlp::backward`] needs.
    pub fn forward_trace(&self, input: &[f64]) -> MlpTrace {
        assert_eq!(input.len(), self.dims[0], "input width mismatch");
        let last = self.n_layers() - 1;
        let mut pre = Vec::with_capacity(self.n_layers());
        let mut act = Vec::with_capacity(self.n_layers());
        let mut cur = input;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let mut z = self.biases[l].clone();
            for o in 0..n_out {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                z[o] += crate::numeric::dot(row, cur);
            }
            let a: Vec<f64> = if l == last {
                z.iter().map(|&v| crate::numeric::sigmoid(v)).collect()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre.push(z);
            act.push(a);
            cur = &act[l];
        }
        MlpTrace {
            input: input.to_vec(),
            pre,
            act,
        }
    }

    /// Reverse pass. `dloss_dz_out` is the gradient of the loss with respect
    /// to the *pre-sigmoid* outputs; for a binary cross-entropy loss on
    /// sigmoid outputs that is simply `p - target`, which is why the sigmoid
    /// is not differentiated here. ReLU uses subgradient 0 at exactly 0.
    pub fn backward(&self, trace: &MlpTrace, dloss_dz_out: &[f64]) -> MlpGrads {
        assert_eq!(dloss_dz_out.len(), self.output_dim(), "output grad width mismatch");
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = dloss_dz_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let below: &[f64] = if l == 0 { &trace.input } else { &trace.act[l - 1] };
            for o in 0..n_out {
                grads.biases[l][o] = delta[o];
                let row = &mut grads.weights[l][o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    row[i] = delta[o] * below[i];
                }
            }
            // Gradient w.r.t. the layer input.
            let mut dbelow = vec![0.0; n_in];
            for o in 0..n_out {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    dbelow[i] += delta[o] * row[i];
                }
            }
            if l == 0 {
                grads.input = dbelow;
            } else {
                for (d, &z) in dbelow.iter_mut().zip(&trace.pre[l - 1]) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = dbelow;
            }
        }
        grads
    }

    /// `theta += scale * grad` over all weights and biases. Descent passes a
    /// negative scale.
    pub fn add_scaled(&mut self, grads: &MlpGrads, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (x, y) in w.iter_mut().zip(g) {
                *x += scale * y;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (x, y) in b.iter_mut().zip(g) {
                *x += scale * y;
            }
        }
    }

    /// Multiplies every weight (not bias) by `factor`; the decoupled form of
    /// an L2 penalty applied at step time.
    pub fn decay_weights(&mut self, factor: f64) {
        for w in &mut self.weights {
            for x in w.iter_mut() {
                *x *= factor;
            }
        }
    }

    /// All parameters flattened in a fixed order (per layer: weights
    /// row-major, then biases). Used by gradient-check harnesses.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.n_layers() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    /// Inverse of [`Mlp::params_flat`].
    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for l in 0..self.n_layers() {
            let nw = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
        assert_eq!(k, flat.len(), "flat parameter length mismatch");
    }

    /// Flattens gradient storage in the same order as [`Mlp::params_flat`].
    pub fn grads_flat(grads: &MlpGrads) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in grads.weights.iter().zip(&grads.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// True if any parameter is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .any(|v| v.iter().any(|x| !x.is_finite()))
    }
}

/// Binary cross-entropy `-(t ln p + (1-t) ln(1-p))` summed over outputs,
/// computed from pre-sigmoid activations for stability.
pub fn bce_from_pre(pre: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(pre.len(), targets.len());
    pre.iter()
        .zip(targets)
        // -[t ln s(z) + (1-t) ln s(-z)]
        .map(|(&z, &t)| -(t * crate::numeric::ln_sigmoid(z) + (1.0 - t) * crate::numeric::ln_sigmoid(-z)))
        .sum()
}

impl Mlp {
    /// BCE of the network outputs against `targets`, plus the trace, in one
    /// pass. Loss is the sum over output units.
    pub fn bce_loss_trace(&self, input: &[f64], targets: &[f64]) -> (f64, MlpTrace) {
        let trace = self.forward_trace(input);
        let loss = bce_from_pre(trace.pre.last().unwrap(), targets);
        (loss, trace)
    }
}
