//! Random dropout networks at finite width.
//!
//! Forward pass, for layers `l = 1..=L`:
//!
//! ```text
//! z^l = (1/ρ) W^l (p^l ⊙ y^{l−1}) + b^l,   y^0 = x,   y^l = φ(z^l)
//! ```
//!
//! with `W^l_ij ~ N(0, σw²/N)`, `b^l_i ~ N(0, σb²)` and Bernoulli(ρ) masks
//! `p^l` drawn per input. The loss is `E = Σ_i (z^L_i)²`, so `δ^L = 2 z^L` and
//!
//! ```text
//! δ^l = φ′(z^l) ⊙ (p^{l+1}/ρ) ⊙ (W^{l+1})ᵀ δ^{l+1},
//! ∂E/∂W^l_ij = δ^l_i · u^l_j,   u^l = p^l ⊙ y^{l−1} / ρ.
//! ```
//!
//! Weight matrices are never stored: each is regenerated from its own stream
//! whenever a pass needs it, which keeps an L = 200, N = 1000 instance at a
//! few megabytes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::{stream, Role};
use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::meanfield::MeanFieldParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub depth: usize,
    pub width: usize,
    pub params: MeanFieldParams,
    pub activation: Activation,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.depth == 0 || self.width == 0 {
            return Err(Error::InvalidConfig(format!(
                "depth and width must be >= 1 (got L = {}, N = {})",
                self.depth, self.width
            )));
        }
        Ok(())
    }
}

/// Which of the two inputs a trace belongs to; selects the mask streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputId {
    A,
    B,
}

impl InputId {
    fn mask_role(self) -> Role {
        match self {
            InputId::A => Role::MaskA,
            InputId::B => Role::MaskB,
        }
    }
}

/// One sampled network: configuration plus instance index. Weights and biases
/// are functions of `(cfg.seed, instance, layer)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Network {
    pub cfg: NetworkConfig,
    pub instance: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input_id: InputId,
    pub input: Array1<f64>,
    /// `z^1 ..= z^L`
    pub pre_activations: Vec<Array1<f64>>,
    /// `p^1 ..= p^L`, entries 0 or 1
    pub masks: Vec<Array1<f64>>,
    network: Network,
}

impl ForwardTrace {
    pub fn loss(&self) -> f64 {
        self.pre_activations.last().map_or(0.0, |z| z.dot(z))
    }

    /// `y^{l−1}` for `l` in `1..=L`.
    fn layer_input(&self, l: usize, phi: Activation) -> Array1<f64> {
        if l == 1 {
            self.input.clone()
        } else {
            self.pre_activations[l - 2].mapv(|z| phi.value(z))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientTrace {
    pub input_id: InputId,
    /// `δ^1 ..= δ^L`
    pub deltas: Vec<Array1<f64>>,
    /// `u^l = p^l ⊙ y^{l−1} / ρ`, the input side of `∂E/∂W^l`
    pub scaled_inputs: Vec<Array1<f64>>,
}

impl GradientTrace {
    /// Dense `∂E/∂W^l` for `l` in `1..=L`.
    pub fn weight_grad(&self, l: usize) -> Result<Array2<f64>> {
        let depth = self.deltas.len();
        if l == 0 || l > depth {
            return Err(Error::LayerOutOfRange { layer: l, depth });
        }
        let d = self.deltas[l - 1].view().insert_axis(Axis(1));
        let u = self.scaled_inputs[l - 1].view().insert_axis(Axis(0));
        Ok(d.dot(&u))
    }

    /// Every `∂E/∂W^l`, layer by layer (N² reals each).
    pub fn weight_grads(&self) -> Vec<Array2<f64>> {
        (1..=self.deltas.len()).map(|l| self.weight_grad(l).expect("layer in range")).collect()
    }
}

impl Network {
    pub fn new(cfg: NetworkConfig, instance: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, instance })
    }

    /// `W^l`, regenerated from its stream on every call.
    pub fn weights(&self, l: usize) -> Array2<f64> {
        let n = self.cfg.width;
        let std = (self.cfg.params.sigma_w_sq / n as f64).sqrt();
        let mut rng = stream(self.cfg.seed, self.instance, Role::Weights, l);
        Array2::from_shape_simple_fn((n, n), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
    }

    pub fn biases(&self, l: usize) -> Array1<f64> {
        let std = self.cfg.params.sigma_b_sq.sqrt();
        let mut rng = stream(self.cfg.seed, self.instance, Role::Bias, l);
        Array1::from_shape_simple_fn(self.cfg.width, || {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
    }

    pub fn mask(&self, input: InputId, l: usize) -> Array1<f64> {
        let rho = self.cfg.params.rho;
        let mut rng = stream(self.cfg.seed, self.instance, input.mask_role(), l);
        Array1::from_shape_simple_fn(self.cfg.width, || {
            if rng.random::<f64>() < rho {
                1.0
            } else {
                0.0
            }
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cfg.width {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.width,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64], input: InputId) -> Result<ForwardTrace> {
        Ok(self.forward_many(&[(x, input)])?.pop().expect("one trace"))
    }

    /// Forward passes of several inputs through the same weights, generating
    /// each `W^l` once.
    pub fn forward_many(&self, inputs: &[(&[f64], InputId)]) -> Result<Vec<ForwardTrace>> {
        for (x, _) in inputs {
            self.check_input(x)?;
        }
        let (n, depth) = (self.cfg.width, self.cfg.depth);
        let rho = self.cfg.params.rho;
        let phi = self.cfg.activation;
        let k = inputs.len();

        let mut traces: Vec<ForwardTrace> = inputs
            .iter()
            .map(|&(x, id)| ForwardTrace {
                input_id: id,
                input: Array1::from(x.to_vec()),
                pre_activations: Vec::with_capacity(depth),
                masks: Vec::with_capacity(depth),
                network: *self,
            })
            .collect();
        let mut y: Vec<Array1<f64>> = traces.iter().map(|t| t.input.clone()).collect();
        let mut u = Array2::<f64>::zeros((n, k));

        for l in 1..=depth {
            for (col, trace) in traces.iter_mut().enumerate() {
                let p = self.mask(trace.input_id, l);
                let mut c = u.column_mut(col);
                c.assign(&(&p * &y[col]));
                c /= rho;
                trace.masks.push(p);
            }
            let w = self.weights(l);
            let b = self.biases(l);
            let z = w.dot(&u);
            for (col, trace) in traces.iter_mut().enumerate() {
                let zl = &z.column(col) + &b;
                y[col] = zl.mapv(|v| phi.value(v));
                trace.pre_activations.push(zl);
            }
        }
        Ok(traces)
    }

    pub fn backward(&self, trace: &ForwardTrace) -> Result<GradientTrace> {
        Ok(self.backward_many(std::slice::from_ref(trace))?.pop().expect("one trace"))
    }

    /// Backpropagation for several traces of this network, regenerating each
    /// `W^l` once and reusing the masks stored in the traces.
    pub fn backward_many(&self, traces: &[ForwardTrace]) -> Result<Vec<GradientTrace>> {
        for t in traces {
            if t.network != *self {
                return Err(Error::InvalidConfig(
                    "trace was produced by a different network".to_owned(),
                ));
            }
        }
        let (n, depth) = (self.cfg.width, self.cfg.depth);
        let rho = self.cfg.params.rho;
        let phi = self.cfg.activation;
        let k = traces.len();

        let mut deltas: Vec<Vec<Array1<f64>>> = vec![Vec::with_capacity(depth); k];
        let mut delta = Array2::<f64>::zeros((n, k));
        for (col, t) in traces.iter().enumerate() {
            delta.column_mut(col).assign(&(&t.pre_activations[depth - 1] * 2.0));
        }
        for (col, d) in deltas.iter_mut().enumerate() {
            d.push(delta.column(col).to_owned());
        }
        for l in (1..depth).rev() {
            let w = self.weights(l + 1);
            let back = w.t().dot(&delta);
            for (col, t) in traces.iter().enumerate() {
                let z = &t.pre_activations[l - 1];
                let p = &t.masks[l];
                let mut d = delta.column_mut(col);
                for i in 0..n {
                    d[i] = phi.derivative(z[i]) * p[i] / rho * back[[i, col]];
                }
                deltas[col].push(d.to_owned());
            }
        }

        Ok(traces
            .iter()
            .zip(deltas)
            .map(|(t, mut ds)| {
                ds.reverse();
                let scaled_inputs = (1..=depth)
                    .map(|l| &t.masks[l - 1] * &t.layer_input(l, phi) / rho)
                    .collect();
                GradientTrace {
                    input_id: t.input_id,
                    deltas: ds,
                    scaled_inputs,
                }
            })
            .collect())
    }

    /// Stores every weight matrix and bias vector.
    pub fn materialize(&self) -> DenseNetwork {
        DenseNetwork {
            weights: (1..=self.cfg.depth).map(|l| self.weights(l)).collect(),
            biases: (1..=self.cfg.depth).map(|l| self.biases(l)).collect(),
            rho: self.cfg.params.rho,
            activation: self.cfg.activation,
        }
    }
}

/// A network with explicit parameters, for perturbation experiments on small
/// widths.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub rho: f64,
    pub activation: Activation,
}

impl DenseNetwork {
    /// Loss `Σ (z^L)²` for input `x` under the given masks `p^1 ..= p^L`.
    pub fn loss(&self, x: &[f64], masks: &[Array1<f64>]) -> f64 {
        let mut y: Vec<f64> = x.to_vec();
        let mut z = Vec::new();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let n_out = w.nrows();
            z = vec![0.0; n_out];
            for i in 0..n_out {
                let mut acc = 0.0;
                for j in 0..y.len() {
                    acc += w[[i, j]] * masks[l][j] * y[j];
                }
                z[i] = acc / self.rho + b[i];
            }
            y = z.iter().map(|&v| self.activation.value(v)).collect();
        }
        z.iter().map(|v| v * v).sum()
    }
}

/// Two inputs with `(1/N)|x_a|² = (1/N)|x_b|² = q0` and
/// `(1/N) x_a·x_b = c0 q0`, up to rounding.
///
/// `x_a` is a rescaled Gaussian vector; `x_b = c0 x_a + √(1 − c0²) x_⊥` with
/// `x_⊥` a Gaussian vector projected orthogonal to `x_a` and rescaled.
pub fn sample_inputs(width: usize, q0: f64, c0: f64, seed: u64, instance: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(q0 > 0.0) || !q0.is_finite() {
        return Err(Error::InvalidConfig(format!("input length q0 must be positive, got {q0}")));
    }
    if !(c0.abs() <= 1.0) {
        return Err(Error::CorrelationOutOfRange(c0));
    }
    let needs_two = c0.abs() < 1.0;
    if width == 0 || (needs_two && width < 2) {
        return Err(Error::InvalidConfig(format!(
            "width {width} cannot carry two inputs with correlation {c0}"
        )));
    }
    let mut rng = stream(seed, instance, Role::Input, 0);
    let mut gauss = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let n = width as f64;
    let rescale = |v: &mut [f64]| {
        let norm_sq: f64 = v.iter().map(|x| x * x).sum();
        let s = (q0 * n / norm_sq).sqrt();
        v.iter_mut().for_each(|x| *x *= s);
    };

    let mut xa = gauss(width);
    rescale(&mut xa);
    if c0 == 1.0 {
        return Ok((xa.clone(), xa));
    }
    if c0 == -1.0 {
        let xb = xa.iter().map(|x| -x).collect();
        return Ok((xa, xb));
    }
    let mut perp = gauss(width);
    let aa: f64 = xa.iter().map(|x| x * x).sum();
    // two projection sweeps remove the component along x_a to rounding level
    for _ in 0..2 {
        let pa: f64 = perp.iter().zip(&xa).map(|(p, a)| p * a).sum();
        let coef = pa / aa;
        perp.iter_mut().zip(&xa).for_each(|(p, a)| *p -= coef * a);
    }
    rescale(&mut perp);
    let s = (1.0 - c0 * c0).sqrt();
    let xb = xa.iter().zip(&perp).map(|(a, p)| c0 * a + s * p).collect();
    Ok((xa, xb))
}
