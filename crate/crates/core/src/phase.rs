//! Depth scales over σw² grids, the critical line χ1 = 1 and trainable-length
//! bounds `min(12 ξ1, 12 ξ2)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::meanfield::{depth_scale, DepthScales, MeanField, MeanFieldParams};
use crate::quadrature::QuadratureRule;

pub const DEFAULT_MULTIPLIER: f64 = 12.0;
pub const DEFAULT_COMPARISON_MULTIPLIER: f64 = 6.0;

/// Bisection stops once the bracket is narrower than this (in σw²).
pub const BISECTION_TOL: f64 = 1e-10;

/// Multipliers of the trainable-length bound and of the comparison curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundMultipliers {
    pub trainable: f64,
    pub comparison: f64,
}

impl Default for BoundMultipliers {
    fn default() -> Self {
        Self {
            trainable: DEFAULT_MULTIPLIER,
            comparison: DEFAULT_COMPARISON_MULTIPLIER,
        }
    }
}

/// Per-point results over an ascending σw² grid. Points whose fixed-point
/// iteration failed carry `converged = false` and NaN values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCurve {
    pub activation: Activation,
    pub sigma_b_sq: f64,
    pub rho: f64,
    pub multipliers: BoundMultipliers,
    pub sigma_w_sq_grid: Vec<f64>,
    pub q_star: Vec<f64>,
    pub c_star: Vec<f64>,
    pub chi1: Vec<f64>,
    pub chi2: Vec<f64>,
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    /// `12 ξ1`
    pub bound_12xi1: Vec<f64>,
    /// `6 ξ2`
    pub bound_6xi2: Vec<f64>,
    /// `12 ξ2`
    pub bound_12xi2: Vec<f64>,
    /// `min(12 ξ1, 12 ξ2)`
    pub trainable_bound: Vec<f64>,
    pub converged: Vec<bool>,
    /// Failure message for points that did not converge.
    pub diagnostics: Vec<Option<String>>,
}

impl PhaseCurve {
    pub fn len(&self) -> usize {
        self.sigma_w_sq_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_w_sq_grid.is_empty()
    }
}

/// `min(m ξ1, m ξ2)`; infinite depth scales propagate.
pub fn bound_from_scales(ds: &DepthScales, multiplier: f64) -> f64 {
    (multiplier * ds.xi1).min(multiplier * ds.xi2)
}

/// Solves q*, c*, χ1, χ2 and ξ1, ξ2 at every grid point (`p_base.sigma_w_sq`
/// is ignored).
pub fn depth_scale_grid(
    grid: &[f64],
    p_base: &MeanFieldParams,
    a: Activation,
    rule: &QuadratureRule,
    multipliers: BoundMultipliers,
) -> Result<PhaseCurve> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty σw² grid".to_owned()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("σw² grid must be strictly ascending".to_owned()));
    }
    let points: Vec<Result<DepthScales>> = grid
        .par_iter()
        .map(|&w| MeanField::new(p_base.with_sigma_w_sq(w), a, rule)?.depth_scales())
        .collect();

    let n = grid.len();
    let mut curve = PhaseCurve {
        activation: a,
        sigma_b_sq: p_base.sigma_b_sq,
        rho: p_base.rho,
        multipliers,
        sigma_w_sq_grid: grid.to_vec(),
        q_star: Vec::with_capacity(n),
        c_star: Vec::with_capacity(n),
        chi1: Vec::with_capacity(n),
        chi2: Vec::with_capacity(n),
        xi1: Vec::with_capacity(n),
        xi2: Vec::with_capacity(n),
        bound_12xi1: Vec::with_capacity(n),
        bound_6xi2: Vec::with_capacity(n),
        bound_12xi2: Vec::with_capacity(n),
        trainable_bound: Vec::with_capacity(n),
        converged: Vec::with_capacity(n),
        diagnostics: Vec::with_capacity(n),
    };
    for point in points {
        let (ds, ok, diag) = match point {
            Ok(ds) => (ds, true, None),
            Err(e) => {
                let nan = f64::NAN;
                let ds = DepthScales {
                    q_star: nan,
                    c_star: nan,
                    chi1: nan,
                    chi2: nan,
                    xi1: nan,
                    xi2: nan,
                };
                (ds, false, Some(e.to_string()))
            }
        };
        curve.q_star.push(ds.q_star);
        curve.c_star.push(ds.c_star);
        curve.chi1.push(ds.chi1);
        curve.chi2.push(ds.chi2);
        curve.xi1.push(ds.xi1);
        curve.xi2.push(ds.xi2);
        curve.bound_12xi1.push(multipliers.trainable * ds.xi1);
        curve.bound_6xi2.push(multipliers.comparison * ds.xi2);
        curve.bound_12xi2.push(multipliers.trainable * ds.xi2);
        curve.trainable_bound.push(if ok {
            bound_from_scales(&ds, multipliers.trainable)
        } else {
            f64::NAN
        });
        curve.converged.push(ok);
        curve.diagnostics.push(diag);
    }
    Ok(curve)
}

/// χ1 at the given σw², with q* re-solved.
///
/// For Linear and ReLU `∫Dz φ′(√q z)²` does not depend on q, so χ1 is
/// evaluated at q = 1 without solving for q* (which may not exist).
pub fn chi1_at(p_base: &MeanFieldParams, a: Activation, rule: &QuadratureRule, sigma_w_sq: f64) -> Result<f64> {
    let mf = MeanField::new(p_base.with_sigma_w_sq(sigma_w_sq), a, rule)?;
    match a {
        Activation::Linear | Activation::ReLU => mf.chi1(1.0),
        _ => mf.chi1(mf.q_star()?),
    }
}

/// σw² at which χ1 equals `target`, by bisection over `bracket`.
pub fn sigma_w_sq_for_chi1(
    p_base: &MeanFieldParams,
    a: Activation,
    rule: &QuadratureRule,
    bracket: (f64, f64),
    target: f64,
) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::InvalidConfig(format!("invalid σw² bracket [{lo}, {hi}]")));
    }
    let chi_lo = chi1_at(p_base, a, rule, lo)?;
    let chi_hi = chi1_at(p_base, a, rule, hi)?;
    if !(chi_lo < target && target < chi_hi) {
        return Err(Error::BracketNotStraddling {
            lo,
            hi,
            chi_lo,
            chi_hi,
        });
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi1_at(p_base, a, rule, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// σw² on the critical line χ1 = 1.
pub fn critical_line(p_base: &MeanFieldParams, a: Activation, rule: &QuadratureRule, bracket: (f64, f64)) -> Result<f64> {
    sigma_w_sq_for_chi1(p_base, a, rule, bracket, 1.0)
}

/// `multiplier · min(ξ1, ξ2)`, `+∞` on the critical line.
pub fn trainable_length(p: &MeanFieldParams, a: Activation, rule: &QuadratureRule, multiplier: f64) -> Result<f64> {
    let ds = MeanField::new(*p, a, rule)?.depth_scales()?;
    Ok(bound_from_scales(&ds, multiplier))
}

/// `m · min(|1/ln χ1|, |1/ln χ2|)` straight from the slopes.
pub fn trainable_length_from_chis(chi1: f64, chi2: f64, multiplier: f64) -> f64 {
    (multiplier * depth_scale(chi1)).min(multiplier * depth_scale(chi2))
}

/// `n` points log-spaced over `[lo, hi]`, endpoints included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(Error::InvalidConfig(format!("log grid needs 0 < lo < hi and n >= 2 (got {lo}, {hi}, {n})")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    g[0] = lo;
    g[n - 1] = hi;
    Ok(g)
}

/// `n` evenly spaced points over `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(hi > lo) || n < 2 {
        return Err(Error::InvalidConfig(format!("grid needs lo < hi and n >= 2 (got {lo}, {hi}, {n})")));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}
