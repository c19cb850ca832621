//! Exact gradient metrics of deep linear dropout networks, with forward and
//! backward passes sharing their weights.
//!
//! With `r = σw²/ρ` and `n = L − l`:
//!
//! ```text
//! g_aa^l = 4 (q*/ρ)² rⁿ [ρ + Σ_{j=1..n} r^j]
//! g_ab^l = 4 q_ab*² σw^{2n} [1 + Σ_{j=1..n} (σw²/ρ²)^j]
//! ```
//!
//! Beyond 50 layers from the output both are evaluated in log space; the
//! `ln_*` variants stay finite where the metric itself overflows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::MeanFieldParams;

/// Layer distance from the output above which powers and sums go through logs.
const LOG_SPACE_FROM: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGradPrediction {
    pub layer: usize,
    pub depth: usize,
    pub g_aa: f64,
    pub g_ab: f64,
}

/// Single-input (`Aa`) or two-input (`Ab`) metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pair {
    Aa,
    Ab,
}

/// Layer-wise expression from the explicit expansion of the last three
/// layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerOracle {
    /// `q̃ = E[δ_a δ_b]` (or `E[δ_a²]`).
    pub delta_moment: f64,
    /// `delta_moment` times the input-side factor `E[(p/ρ)² y²] = q*/ρ`
    /// (or `E[p_a p_b y_a y_b]/ρ² = q_ab*`).
    pub gradient_metric: f64,
}

fn offset(l: usize, depth: usize) -> Result<usize> {
    if l == 0 || l > depth {
        return Err(Error::LayerOutOfRange { layer: l, depth });
    }
    Ok(depth - l)
}

/// `ln Σ_{j=1..n} e^{j·lr}`.
fn ln_geometric_sum(lr: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    let nf = n as f64;
    if lr == 0.0 {
        nf.ln()
    } else if lr > 0.0 {
        lr + nf * lr + (-(-nf * lr).exp_m1()).ln() - lr.exp_m1().ln()
    } else {
        lr + (-(nf * lr).exp_m1()).ln() - (-lr.exp_m1()).ln()
    }
}

fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

// ln( prefactor · ratioⁿ · [head + Σ_{j=1..n} growth^j] )
fn ln_metric(prefactor: f64, ratio: f64, head: f64, growth: f64, n: usize) -> f64 {
    let bracket = ln_add_exp(head.ln(), ln_geometric_sum(growth.ln(), n));
    prefactor.ln() + n as f64 * ratio.ln() + bracket
}

fn direct_metric(prefactor: f64, ratio: f64, head: f64, growth: f64, n: usize) -> f64 {
    let mut sum = head;
    let mut term = 1.0;
    for _ in 0..n {
        term *= growth;
        sum += term;
    }
    prefactor * ratio.powi(n as i32) * sum
}

fn metric(prefactor: f64, ratio: f64, head: f64, growth: f64, n: usize) -> f64 {
    if n <= LOG_SPACE_FROM || prefactor == 0.0 || ratio == 0.0 {
        direct_metric(prefactor, ratio, head, growth, n)
    } else {
        ln_metric(prefactor, ratio, head, growth, n).exp()
    }
}

fn aa_terms(p: &MeanFieldParams, q_star: f64) -> (f64, f64, f64, f64) {
    let r = p.sigma_w_sq / p.rho;
    let pre = 4.0 * (q_star / p.rho).powi(2);
    (pre, r, p.rho, r)
}

fn ab_terms(p: &MeanFieldParams, q_ab_star: f64) -> (f64, f64, f64, f64) {
    let pre = 4.0 * q_ab_star * q_ab_star;
    (pre, p.sigma_w_sq, 1.0, p.sigma_w_sq / (p.rho * p.rho))
}

pub fn g_aa_closed(l: usize, depth: usize, p: &MeanFieldParams, q_star: f64) -> Result<f64> {
    let n = offset(l, depth)?;
    let (pre, ratio, head, growth) = aa_terms(p, q_star);
    Ok(metric(pre, ratio, head, growth, n))
}

pub fn g_ab_closed(l: usize, depth: usize, p: &MeanFieldParams, q_ab_star: f64) -> Result<f64> {
    let n = offset(l, depth)?;
    let (pre, ratio, head, growth) = ab_terms(p, q_ab_star);
    Ok(metric(pre, ratio, head, growth, n))
}

/// Natural log of [`g_aa_closed`]; finite even where the metric overflows.
pub fn ln_g_aa_closed(l: usize, depth: usize, p: &MeanFieldParams, q_star: f64) -> Result<f64> {
    let n = offset(l, depth)?;
    let (pre, ratio, head, growth) = aa_terms(p, q_star);
    Ok(ln_metric(pre, ratio, head, growth, n))
}

pub fn ln_g_ab_closed(l: usize, depth: usize, p: &MeanFieldParams, q_ab_star: f64) -> Result<f64> {
    let n = offset(l, depth)?;
    let (pre, ratio, head, growth) = ab_terms(p, q_ab_star);
    Ok(ln_metric(pre, ratio, head, growth, n))
}

/// Explicit expressions for layers `L`, `L − 1` and `L − 2`, written out term
/// by term. `q` is q* for [`Pair::Aa`] and q_ab* for [`Pair::Ab`].
pub fn appendix_layer_oracle(k: usize, which: Pair, p: &MeanFieldParams, q: f64) -> Result<LayerOracle> {
    let s = p.sigma_w_sq;
    let rho = p.rho;
    let delta_moment = match which {
        Pair::Aa => {
            let sr = s / rho;
            match k {
                0 => 4.0 * q,
                1 => 4.0 * (q / rho) * sr * (rho + sr),
                2 => 4.0 * (q / rho) * sr * sr * (rho + sr + sr * sr),
                _ => return Err(Error::UnsupportedOffset(k)),
            }
        }
        Pair::Ab => {
            let sr2 = s / (rho * rho);
            match k {
                0 => 4.0 * q,
                1 => 4.0 * q * s * (1.0 + sr2),
                2 => 4.0 * q * s * s * (1.0 + sr2 + sr2 * sr2),
                _ => return Err(Error::UnsupportedOffset(k)),
            }
        }
    };
    let input_side = match which {
        Pair::Aa => q / rho,
        Pair::Ab => q,
    };
    Ok(LayerOracle {
        delta_moment,
        gradient_metric: delta_moment * input_side,
    })
}

/// Prediction under the gradient independence assumption:
/// `g_aa^l = g_aa^L χ1^{L−l}`, `g_ab^l = g_ab^L χ2^{L−l}`.
pub fn independence_baseline(l: usize, depth: usize, chi1: f64, chi2: f64, g_l_aa: f64, g_l_ab: f64) -> (f64, f64) {
    let n = depth.saturating_sub(l) as f64;
    (g_l_aa * chi1.powf(n), g_l_ab * chi2.powf(n))
}

/// Closed-form metrics for layers `1..=depth`.
pub fn linear_predictions(
    depth: usize,
    p: &MeanFieldParams,
    q_star: f64,
    q_ab_star: f64,
) -> Result<Vec<LinearGradPrediction>> {
    (1..=depth)
        .map(|layer| {
            Ok(LinearGradPrediction {
                layer,
                depth,
                g_aa: g_aa_closed(layer, depth, p, q_star)?,
                g_ab: g_ab_closed(layer, depth, p, q_ab_star)?,
            })
        })
        .collect()
}
