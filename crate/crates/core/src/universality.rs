//! Variance-vs-mean power laws of per-layer gradient metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::meanfield::{MeanField, MeanFieldParams};
use crate::phase::sigma_w_sq_for_chi1;
use crate::quadrature::QuadratureRule;
use crate::simulator::{ensemble_run, InputSpec, Metric, NetworkConfig};

/// Means below this are treated as underflow and left out of fits.
pub const UNDERFLOW: f64 = 1e-300;

/// Default χ1 at which each configuration is placed.
pub const DEFAULT_CHI1_TARGET: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub log_intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Least-squares fit of `ln V = log_intercept + exponent · ln m`.
pub fn fit_power_law(means: &[f64], variances: &[f64]) -> Result<PowerLawFit> {
    if means.len() != variances.len() {
        return Err(Error::DimensionMismatch {
            expected: means.len(),
            found: variances.len(),
        });
    }
    if means.len() < 3 {
        return Err(Error::InvalidFitInput(format!("need at least 3 points, got {}", means.len())));
    }
    if let Some(bad) = means.iter().chain(variances).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidFitInput(format!("values must be positive and finite, got {bad}")));
    }
    let xs: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let ys: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidFitInput("all means are equal".to_owned()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(PowerLawFit {
        exponent: slope,
        log_intercept: intercept,
        r_squared,
        n_points: xs.len(),
    })
}

/// Inclusive 1-based layer window `[⌈0.1 L⌉, ⌊0.95 L⌋]`.
pub fn fit_window(depth: usize) -> (usize, usize) {
    let lo = ((0.1 * depth as f64).ceil() as usize).max(1);
    let hi = (0.95 * depth as f64).floor() as usize;
    (lo, hi)
}

/// One row of the sweep. `sigma_w_sq = None` places the network at the
/// configured χ1 target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniversalityEntry {
    pub activation: Activation,
    pub rho: f64,
    pub width: usize,
    #[serde(default)]
    pub sigma_w_sq: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniversalityBase {
    pub depth: usize,
    pub sigma_b_sq: f64,
    pub seed: u64,
    pub c0: f64,
    pub chi1_target: f64,
    pub sigma_w_bracket: (f64, f64),
}

impl Default for UniversalityBase {
    fn default() -> Self {
        Self {
            depth: 200,
            sigma_b_sq: 0.1,
            seed: 0,
            c0: 0.5,
            chi1_target: DEFAULT_CHI1_TARGET,
            sigma_w_bracket: (0.01, 20.0),
        }
    }
}

/// Per-layer `(layer, mean, variance)` of one metric.
pub type Scatter = Vec<(usize, f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct UniversalityRow {
    pub entry: UniversalityEntry,
    pub metric: Metric,
    /// σw² actually simulated (NaN if it could not be resolved)
    pub sigma_w_sq: f64,
    pub fit: std::result::Result<PowerLawFit, Error>,
    pub n_excluded: usize,
    pub scatter: Scatter,
}

/// Splits the window into usable `(mean, variance)` pairs and an exclusion count.
pub fn usable_points(mean: &[f64], variance: &[f64], window: (usize, usize)) -> (Vec<f64>, Vec<f64>, usize) {
    let (mut m, mut v, mut excluded) = (Vec::new(), Vec::new(), 0);
    for l in window.0..=window.1.min(mean.len()) {
        let (a, b) = (mean[l - 1], variance[l - 1]);
        if a >= UNDERFLOW && a.is_finite() && b > 0.0 && b.is_finite() {
            m.push(a);
            v.push(b);
        } else {
            excluded += 1;
        }
    }
    (m, v, excluded)
}

fn resolve_sigma_w_sq(entry: &UniversalityEntry, base: &UniversalityBase, rule: &QuadratureRule) -> Result<f64> {
    if let Some(w) = entry.sigma_w_sq {
        return Ok(w);
    }
    let p = MeanFieldParams::new(1.0, base.sigma_b_sq, entry.rho)?;
    sigma_w_sq_for_chi1(&p, entry.activation, rule, base.sigma_w_bracket, base.chi1_target)
}

fn run_entry(
    entry: &UniversalityEntry,
    base: &UniversalityBase,
    n_instances: usize,
    rule: &QuadratureRule,
) -> (f64, Result<std::collections::BTreeMap<Metric, crate::simulator::EnsembleStats>>) {
    let w = match resolve_sigma_w_sq(entry, base, rule) {
        Ok(w) => w,
        Err(e) => return (f64::NAN, Err(e)),
    };
    let run = || {
        let params = MeanFieldParams::new(w, base.sigma_b_sq, entry.rho)?;
        let q0 = MeanField::new(params, entry.activation, rule)?.q_star()?;
        let cfg = NetworkConfig {
            depth: base.depth,
            width: entry.width,
            params,
            activation: entry.activation,
            seed: base.seed,
        };
        ensemble_run(&cfg, n_instances, InputSpec { q0, c0: base.c0 }, &Metric::GRADIENT)
    };
    (w, run())
}

/// Runs every entry, fits `V ∝ m^k` for g_aa, g_ab and g̃_ab over the fit
/// window, and returns one row per (entry, metric). A failing entry yields
/// error rows; the other entries are unaffected.
pub fn universality_report(
    entries: &[UniversalityEntry],
    base: &UniversalityBase,
    n_instances: usize,
    rule: &QuadratureRule,
) -> Result<Vec<UniversalityRow>> {
    if entries.is_empty() {
        return Err(Error::InvalidConfig("no universality configurations".to_owned()));
    }
    if base.depth < 1 {
        return Err(Error::InvalidConfig("depth must be >= 1".to_owned()));
    }
    let window = fit_window(base.depth);
    let per_entry: Vec<_> = entries.par_iter().map(|e| run_entry(e, base, n_instances, rule)).collect();

    let mut rows = Vec::with_capacity(entries.len() * Metric::GRADIENT.len());
    for (entry, (w, result)) in entries.iter().zip(per_entry) {
        for metric in Metric::GRADIENT {
            let row = match &result {
                Ok(stats) => {
                    let s = &stats[&metric];
                    let (m, v, n_excluded) = usable_points(&s.per_layer_mean, &s.per_layer_variance, window);
                    UniversalityRow {
                        entry: *entry,
                        metric,
                        sigma_w_sq: w,
                        fit: fit_power_law(&m, &v),
                        n_excluded,
                        scatter: (1..=s.per_layer_mean.len())
                            .map(|l| (l, s.per_layer_mean[l - 1], s.per_layer_variance[l - 1]))
                            .collect(),
                    }
                }
                Err(e) => UniversalityRow {
                    entry: *entry,
                    metric,
                    sigma_w_sq: w,
                    fit: Err(e.clone()),
                    n_excluded: 0,
                    scatter: Vec::new(),
                },
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn exact_square_law() {
        let m = [0.1, 1.0, 3.0, 10.0];
        let v: Vec<f64> = m.iter().map(|x| x * x).collect();
        let fit = fit_power_law(&m, &v).unwrap();
        assert_abs_diff_eq!(fit.exponent, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.log_intercept, 0.0, epsilon = 1e-12);
        assert_eq!(fit.r_squared, 1.0);
        assert_eq!(fit.n_points, 4);
    }

    #[test]
    fn prefactor_and_exponent() {
        let m = [0.5, 2.0, 4.0, 9.0, 11.0];
        let v: Vec<f64> = m.iter().map(|x: &f64| 7.0 * x.powf(1.5)).collect();
        let fit = fit_power_law(&m, &v).unwrap();
        assert_abs_diff_eq!(fit.exponent, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.log_intercept, 7f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_power_law(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(fit_power_law(&[1.0, 2.0, 0.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_power_law(&[1.0, 2.0, 3.0], &[1.0, -2.0, 3.0]).is_err());
        assert!(fit_power_law(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(fit_power_law(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn noisy_fit_has_r2_below_one() {
        let m = [1.0, 2.0, 3.0, 4.0];
        let v = [1.0, 5.0, 8.0, 17.0];
        let fit = fit_power_law(&m, &v).unwrap();
        assert!(fit.r_squared > 0.5 && fit.r_squared < 1.0);
    }

    #[test]
    fn window_bounds() {
        assert_eq!(fit_window(200), (20, 190));
        assert_eq!(fit_window(100), (10, 95));
        assert_eq!(fit_window(5), (1, 4));
    }

    #[test]
    fn underflow_and_zero_variance_are_counted() {
        let mean = [1.0, 1e-310, 2.0, 3.0, 0.0];
        let var = [1.0, 1.0, 0.0, 9.0, 1.0];
        let (m, v, excluded) = usable_points(&mean, &var, (1, 5));
        assert_eq!(m, vec![1.0, 3.0]);
        assert_eq!(v, vec![1.0, 9.0]);
        assert_eq!(excluded, 3);
    }

    #[test]
    fn empty_report_rejected() {
        let rule = QuadratureRule::default();
        assert!(universality_report(&[], &UniversalityBase::default(), 2, &rule).is_err());
    }

    #[test]
    fn small_report_has_one_row_per_metric() {
        let rule = QuadratureRule::default();
        let base = UniversalityBase {
            depth: 12,
            ..UniversalityBase::default()
        };
        let entries = [
            UniversalityEntry {
                activation: Activation::Tanh,
                rho: 0.9,
                width: 16,
                sigma_w_sq: None,
            },
            UniversalityEntry {
                activation: Activation::Linear,
                rho: 0.0,
                width: 16,
                sigma_w_sq: Some(0.5),
            },
        ];
        let rows = universality_report(&entries, &base, 2, &rule).unwrap();
        assert_eq!(rows.len(), 6);
        for row in &rows[..3] {
            assert!(row.fit.is_ok(), "{:?}", row.fit);
            assert_eq!(row.scatter.len(), 12);
            let chi1 = MeanField::new(MeanFieldParams::new(row.sigma_w_sq, 0.1, 0.9).unwrap(), Activation::Tanh, &rule)
                .unwrap()
                .depth_scales()
                .unwrap()
                .chi1;
            assert_abs_diff_eq!(chi1, DEFAULT_CHI1_TARGET, epsilon = 1e-8);
        }
        assert_eq!(rows[0].metric, Metric::GAa);
        for row in &rows[3..] {
            assert!(matches!(row.fit, Err(Error::InvalidParams(_))));
        }
    }

    proptest! {
        #[test]
        fn exponent_is_scale_invariant(
            ms in proptest::collection::vec(0.01f64..100.0, 4..20),
            noise in proptest::collection::vec(-0.3f64..0.3, 20),
            k in 0.5f64..3.0,
            s in 1e-3f64..1e3,
        ) {
            prop_assume!(ms.iter().any(|m| (m - ms[0]).abs() > 1e-3));
            let vs: Vec<f64> = ms.iter().zip(&noise).map(|(m, e)| m.powf(k) * e.exp()).collect();
            let scaled: Vec<f64> = ms.iter().map(|m| m * s).collect();
            let a = fit_power_law(&ms, &vs).unwrap();
            let b = fit_power_law(&scaled, &vs).unwrap();
            prop_assert!((a.exponent - b.exponent).abs() < 1e-10);
            prop_assert!((a.r_squared - b.r_squared).abs() < 1e-10);
        }

        #[test]
        fn recovers_exact_power_laws(
            ms in proptest::collection::vec(0.01f64..100.0, 3..20),
            k in -3.0f64..3.0,
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(ms.iter().any(|m| (m / ms[0]).ln().abs() > 1e-2));
            let vs: Vec<f64> = ms.iter().map(|m| c * m.powf(k)).collect();
            let fit = fit_power_law(&ms, &vs).unwrap();
            prop_assert!((fit.exponent - k).abs() < 1e-9);
            prop_assert!((fit.log_intercept - c.ln()).abs() < 1e-8);
            prop_assert!(fit.r_squared >= 0.0 && fit.r_squared <= 1.0);
        }
    }
}
