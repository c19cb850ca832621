//! Mean-field recursions for a random dropout network: the length map of a
//! single input, the correlation map of a pair, their fixed points, the slopes
//! χ1 and χ2 and the depth scales ξ = |1/ln χ|.
//!
//! All Gaussian integrals go through the composite integrator of
//! [`QuadratureRule`], with the activation's kinks as panel edges.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::fixed_point::{FixedPoint, Solver};
use crate::quadrature::QuadratureRule;

/// Starting correlation for the c* search. Starting below one keeps the
/// search away from the c = 1 fixed point, which would otherwise mask a
/// c* < 1.
pub const DEFAULT_C0: f64 = 0.9;

/// Distance from ±1 within which a converged c* is checked against the
/// boundary fixed point.
pub const BOUNDARY_SNAP: f64 = 1e-6;

/// Starting length for the q* search.
pub const DEFAULT_Q0: f64 = 1.0;

/// |χ − 1| below this counts as exactly critical: ξ = ∞.
pub const CRITICAL_TOL: f64 = 1e-12;

/// Weight variance σw², bias variance σb² and dropout keep rate ρ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldParams {
    pub sigma_w_sq: f64,
    pub sigma_b_sq: f64,
    pub rho: f64,
}

impl MeanFieldParams {
    pub fn new(sigma_w_sq: f64, sigma_b_sq: f64, rho: f64) -> Result<Self> {
        let p = Self {
            sigma_w_sq,
            sigma_b_sq,
            rho,
        };
        p.validate()?;
        Ok(p)
    }

    /// Rejects σw² < 0, σb² < 0 and ρ outside (0, 1].
    ///
    /// σw² = 0 is accepted as the degenerate constant map.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w_sq >= 0.0) || !self.sigma_w_sq.is_finite() {
            return Err(Error::InvalidParams(format!("sigma_w_sq must be >= 0, got {}", self.sigma_w_sq)));
        }
        if !(self.sigma_b_sq >= 0.0) || !self.sigma_b_sq.is_finite() {
            return Err(Error::InvalidParams(format!("sigma_b_sq must be >= 0, got {}", self.sigma_b_sq)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidParams(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        Ok(())
    }

    pub fn with_sigma_w_sq(self, sigma_w_sq: f64) -> Self {
        Self { sigma_w_sq, ..self }
    }
}

/// Lengths of two inputs and their correlation after `layer` layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthState {
    pub q_aa: f64,
    pub q_bb: f64,
    pub c_ab: f64,
    pub layer: usize,
}

impl LengthState {
    pub fn new(q_aa: f64, q_bb: f64, c_ab: f64) -> Result<Self> {
        let s = Self {
            q_aa,
            q_bb,
            c_ab,
            layer: 0,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        for q in [self.q_aa, self.q_bb] {
            if !(q >= 0.0) {
                return Err(Error::NegativeLength(q));
            }
        }
        if !(self.c_ab.abs() <= 1.0) {
            return Err(Error::CorrelationOutOfRange(self.c_ab));
        }
        Ok(())
    }
}

/// Fixed points, slopes and depth scales at one hyperparameter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScales {
    pub q_star: f64,
    pub c_star: f64,
    pub chi1: f64,
    pub chi2: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl DepthScales {
    /// `q*_ab = c* q*`, the cross length at the fixed point.
    pub fn q_ab_star(&self) -> f64 {
        self.c_star * self.q_star
    }
}

/// `|1 / ln χ|`, or `+∞` when χ is within 1e-12 of one.
pub fn depth_scale(chi: f64) -> f64 {
    if (chi - 1.0).abs() <= CRITICAL_TOL {
        f64::INFINITY
    } else {
        (1.0 / chi.ln()).abs()
    }
}

/// The recursions for one (params, activation) pair.
#[derive(Debug, Clone, Copy)]
pub struct MeanField<'r> {
    pub params: MeanFieldParams,
    pub activation: Activation,
    pub rule: &'r QuadratureRule,
    pub solver: Solver,
}

impl<'r> MeanField<'r> {
    pub fn new(params: MeanFieldParams, activation: Activation, rule: &'r QuadratureRule) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            activation,
            rule,
            solver: Solver::default(),
        })
    }

    pub fn with_solver(self, solver: Solver) -> Self {
        Self { solver, ..self }
    }

    /// `E[φ(√q z)²]`
    fn mean_sq_activation(&self, q: f64) -> Result<f64> {
        let phi = self.activation;
        self.rule.expect_normal(0.0, q.sqrt(), phi.kinks(), |u| {
            let y = phi.value(u);
            y * y
        })
    }

    /// One application of the length map
    /// `q ↦ σw²/ρ ∫Dz φ(√q z)² + σb²`.
    pub fn q_step(&self, q: f64) -> Result<f64> {
        if !(q >= 0.0) {
            return Err(Error::NegativeLength(q));
        }
        let p = &self.params;
        Ok(p.sigma_w_sq / p.rho * self.mean_sq_activation(q)? + p.sigma_b_sq)
    }

    /// Iterates the length map from `q0` to its fixed point.
    ///
    /// Fails with [`Error::NoConvergence`] in divergent regimes, such as a
    /// linear network with σw² ≥ ρ.
    pub fn q_fixed_point(&self, q0: f64) -> Result<FixedPoint> {
        if !(q0 > 0.0) {
            return Err(Error::NegativeLength(q0));
        }
        self.solver.solve(q0, |q| self.q_step(q), |q| q.max(0.0))
    }

    pub fn q_star(&self) -> Result<f64> {
        Ok(self.q_fixed_point(DEFAULT_Q0)?.value)
    }

    /// `σw² ∫Dz1 Dz2 φ(u1) φ(u2) + σb²` with `u1 = √q_aa z1`,
    /// `u2 = √q_bb (c z1 + √(1 − c²) z2)`.
    pub fn q_ab_step(&self, q_aa: f64, q_bb: f64, c: f64) -> Result<f64> {
        let phi = self.activation;
        let cross = self
            .rule
            .expect_bivariate(q_aa, q_bb, c, phi.kinks(), |u1, u2| phi.value(u1) * phi.value(u2))?;
        Ok(self.params.sigma_w_sq * cross + self.params.sigma_b_sq)
    }

    /// Next-layer correlation before clamping, with the next-layer lengths.
    pub fn correlation_map_unclamped(&self, q_aa: f64, q_bb: f64, c: f64) -> Result<(f64, f64, f64)> {
        let next_aa = self.q_step(q_aa)?;
        let next_bb = if q_bb == q_aa { next_aa } else { self.q_step(q_bb)? };
        if next_aa <= 0.0 || next_bb <= 0.0 {
            return Err(Error::DegenerateState);
        }
        let q_ab = self.q_ab_step(q_aa, q_bb, c)?;
        let norm = if next_aa == next_bb {
            next_aa
        } else {
            (next_aa * next_bb).sqrt()
        };
        Ok((q_ab / norm, next_aa, next_bb))
    }

    /// Advances both lengths and the correlation by one layer.
    pub fn c_step(&self, s: LengthState) -> Result<LengthState> {
        s.validate()?;
        let (c, q_aa, q_bb) = self.correlation_map_unclamped(s.q_aa, s.q_bb, s.c_ab)?;
        Ok(LengthState {
            q_aa,
            q_bb,
            c_ab: c.clamp(-1.0, 1.0),
            layer: s.layer + 1,
        })
    }

    fn c_map_at(&self, q_star: f64, c: f64) -> Result<f64> {
        Ok(self.correlation_map_unclamped(q_star, q_star, c)?.0.clamp(-1.0, 1.0))
    }

    /// True when the length map has no finite fixed point because `q` grows
    /// without bound. Only Linear and ReLU qualify: for them
    /// `φ(√q z)² = q φ(z)²`, so the map is affine in `q` with slope
    /// `σw²/ρ ∫Dz φ(z)²`.
    pub fn length_unbounded(&self) -> bool {
        let second_moment = match self.activation {
            Activation::Linear => 1.0,
            Activation::ReLU => 0.5,
            _ => return false,
        };
        let growth = self.params.sigma_w_sq / self.params.rho * second_moment;
        growth > 1.0 || (growth == 1.0 && self.params.sigma_b_sq > 0.0)
    }

    /// Drives both lengths to q*, then iterates the correlation map from `c0`.
    ///
    /// When the lengths diverge (see [`Self::length_unbounded`]) the bias
    /// terms become negligible against `q` and the correlation map tends to
    /// its σb² = 0 form, which no longer depends on `q`; c* is the fixed point
    /// of that limit map.
    pub fn c_fixed_point(&self, c0: f64) -> Result<FixedPoint> {
        if !(c0.abs() <= 1.0) {
            return Err(Error::CorrelationOutOfRange(c0));
        }
        if self.length_unbounded() {
            let limit = MeanField {
                params: MeanFieldParams {
                    sigma_b_sq: 0.0,
                    ..self.params
                },
                ..*self
            };
            return limit.c_fixed_point_at(1.0, c0);
        }
        let q_star = self.q_star()?;
        self.c_fixed_point_at(q_star, c0)
    }

    /// An iterate that settles within [`BOUNDARY_SNAP`] of ±1 is moved onto
    /// the boundary when the boundary is itself an exact fixed point. The
    /// iteration approaches it at rate χ and would otherwise stop about
    /// `tol / (1 − χ)` short.
    fn c_fixed_point_at(&self, q_star: f64, c0: f64) -> Result<FixedPoint> {
        let mut fp = self
            .solver
            .solve(c0, |c| self.c_map_at(q_star, c), |c| c.clamp(-1.0, 1.0))?;
        let edge = fp.value.signum();
        if (fp.value - edge).abs() < BOUNDARY_SNAP && self.c_map_at(q_star, edge)? == edge {
            fp.value = edge;
        }
        Ok(fp)
    }

    /// `χ1 = σw²/ρ ∫Dz φ′(√q* z)²`
    pub fn chi1(&self, q_star: f64) -> Result<f64> {
        if !(q_star >= 0.0) {
            return Err(Error::NegativeLength(q_star));
        }
        let phi = self.activation;
        let slope_sq = self.rule.expect_normal(0.0, q_star.sqrt(), phi.kinks(), |u| {
            let d = phi.derivative(u);
            d * d
        })?;
        Ok(self.params.sigma_w_sq / self.params.rho * slope_sq)
    }

    /// `χ2 = σw² ∫Dz1 Dz2 φ′(u1*) φ′(u2*)`, with both lengths at q*.
    pub fn chi2(&self, q_star: f64, c_star: f64) -> Result<f64> {
        let phi = self.activation;
        let cross = self.rule.expect_bivariate(q_star, q_star, c_star, phi.kinks(), |u1, u2| {
            phi.derivative(u1) * phi.derivative(u2)
        })?;
        Ok(self.params.sigma_w_sq * cross)
    }

    pub fn depth_scales(&self) -> Result<DepthScales> {
        let q_star = self.q_star()?;
        let c_star = self.c_fixed_point_at(q_star, DEFAULT_C0)?.value;
        let chi1 = self.chi1(q_star)?;
        let chi2 = self.chi2(q_star, c_star)?;
        Ok(DepthScales {
            q_star,
            c_star,
            chi1,
            chi2,
            xi1: depth_scale(chi1),
            xi2: depth_scale(chi2),
        })
    }

    /// `q^0 = q0, q^1, …, q^layers` under the length map.
    pub fn q_trajectory(&self, q0: f64, layers: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(layers + 1);
        let mut q = q0;
        out.push(q);
        for _ in 0..layers {
            q = self.q_step(q)?;
            out.push(q);
        }
        Ok(out)
    }

    /// Length of the first pre-activation when the raw input (with length
    /// `q_in = |x|²/N`) is fed in without a nonlinearity:
    /// `σw²/ρ q_in + σb²`.
    pub fn input_layer_q(&self, q_in: f64) -> Result<f64> {
        if !(q_in >= 0.0) {
            return Err(Error::NegativeLength(q_in));
        }
        Ok(self.params.sigma_w_sq / self.params.rho * q_in + self.params.sigma_b_sq)
    }

    /// `q^1, …, q^layers` for a network fed a raw input of length `q_in`.
    pub fn q_trajectory_from_input(&self, q_in: f64, layers: usize) -> Result<Vec<f64>> {
        if layers == 0 {
            return Ok(Vec::new());
        }
        let first = self.input_layer_q(q_in)?;
        self.q_trajectory(first, layers - 1)
    }

    /// First-layer state for two raw inputs of lengths `q_a`, `q_b` and
    /// correlation `c0`. The two inputs see independent masks, so the cross
    /// term carries σw² rather than σw²/ρ.
    pub fn input_layer_state(&self, q_a: f64, q_b: f64, c0: f64) -> Result<LengthState> {
        LengthState::new(q_a, q_b, c0)?;
        let q_aa = self.input_layer_q(q_a)?;
        let q_bb = self.input_layer_q(q_b)?;
        if q_aa <= 0.0 || q_bb <= 0.0 {
            return Err(Error::DegenerateState);
        }
        let q_ab = self.params.sigma_w_sq * c0 * (q_a * q_b).sqrt() + self.params.sigma_b_sq;
        let norm = if q_aa == q_bb { q_aa } else { (q_aa * q_bb).sqrt() };
        Ok(LengthState {
            q_aa,
            q_bb,
            c_ab: (q_ab / norm).clamp(-1.0, 1.0),
            layer: 1,
        })
    }

    /// States for layers `1..=layers` of a network fed two raw inputs.
    pub fn c_trajectory_from_input(&self, q_a: f64, q_b: f64, c0: f64, layers: usize) -> Result<Vec<LengthState>> {
        if layers == 0 {
            return Ok(Vec::new());
        }
        let first = self.input_layer_state(q_a, q_b, c0)?;
        self.c_trajectory(first, layers - 1)
    }

    /// States `0..=layers` of the joint length/correlation recursion.
    pub fn c_trajectory(&self, start: LengthState, layers: usize) -> Result<Vec<LengthState>> {
        let mut out = Vec::with_capacity(layers + 1);
        let mut s = start;
        out.push(s);
        for _ in 0..layers {
            s = self.c_step(s)?;
            out.push(s);
        }
        Ok(out)
    }

    /// Empirical ξ2 from the decay of `|c^l − c*|` along the recursion
    /// started at q* and `c0`.
    ///
    /// The first 20% of layers are dropped and the recursion stops once
    /// `|c^l − c*|` falls below 1e-12; the result is `−1 / slope` of the
    /// least-squares fit of `ln|c^l − c*|` against `l`.
    pub fn c_convergence_rate(&self, c0: f64, layers: usize) -> Result<f64> {
        if layers < 10 {
            return Err(Error::InvalidConfig(format!("need at least 10 layers, got {layers}")));
        }
        let q_star = self.q_star()?;
        let c_star = self.c_fixed_point_at(q_star, c0)?.value;
        let mut c = c0;
        let skip = (layers as f64 * 0.2).ceil() as usize;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for l in 1..=layers {
            c = self.c_map_at(q_star, c)?;
            let gap = (c - c_star).abs();
            if gap < 1e-12 {
                break;
            }
            if l >= skip {
                xs.push(l as f64);
                ys.push(gap.ln());
            }
        }
        if xs.len() < 3 {
            return Err(Error::NotExponential(format!(
                "only {} usable points above the 1e-12 floor",
                xs.len()
            )));
        }
        let slope = least_squares_slope(&xs, &ys);
        if !(slope < 0.0) {
            return Err(Error::NotExponential(format!("|c - c*| does not decay (slope {slope})")));
        }
        Ok(-1.0 / slope)
    }
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
