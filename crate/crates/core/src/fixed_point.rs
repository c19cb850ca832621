//! Scalar fixed-point iteration `x ← f(x)`.
//!
//! Plain iteration, switched to 0.5 damping once successive steps change
//! sign, plus a guarded Aitken Δ² extrapolation when the iterates settle
//! into slow monotone (linear) convergence. An extrapolated point is only
//! kept if its residual beats the current one.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub value: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solver {
    pub tol: f64,
    pub max_iter: usize,
    /// Allow Aitken extrapolation on slowly converging sequences.
    pub accelerate: bool,
}

impl Default for Solver {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            accelerate: true,
        }
    }
}

impl Solver {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            ..Self::default()
        }
    }

    /// Iterates `map` from `x0` until `|map(x) − x| < tol`. The reported
    /// iteration count is the number of updates of `x`.
    ///
    /// `project` is applied to every candidate point (e.g. clamping a
    /// correlation into `[-1, 1]`).
    pub fn solve<F, P>(&self, x0: f64, mut map: F, project: P) -> Result<FixedPoint>
    where
        F: FnMut(f64) -> Result<f64>,
        P: Fn(f64) -> f64,
    {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", self.tol)));
        }
        let mut x = project(x0);
        let mut fx = map(x)?;
        let mut damped = false;
        let mut prev_step: Option<f64> = None;
        // last two undamped (x, f(x)) pairs, for Aitken
        let mut history: Option<(f64, f64)> = None;

        for iteration in 1..=self.max_iter {
            if !fx.is_finite() {
                return Err(Error::NoConvergence {
                    last: fx,
                    iterations: iteration,
                });
            }
            let step = fx - x;
            if step.abs() < self.tol {
                return Ok(FixedPoint {
                    value: fx,
                    iterations: iteration - 1,
                });
            }
            if let Some(p) = prev_step {
                if p.signum() != step.signum() {
                    damped = true;
                }
            }
            prev_step = Some(step);

            let mut next = if damped { x + 0.5 * step } else { fx };

            if self.accelerate && !damped {
                let mut jumped = false;
                if let Some((x_prev, fx_prev)) = history {
                    // consecutive steps d0 = x - x_prev, d1 = fx - x
                    let d0 = fx_prev - x_prev;
                    let d1 = step;
                    let ratio = d1 / d0;
                    if ratio > 0.5 && ratio < 1.0 {
                        let candidate = project(fx - d1 * d1 / (d1 - d0));
                        if candidate.is_finite() {
                            let f_candidate = map(candidate)?;
                            if (f_candidate - candidate).abs() < step.abs() {
                                next = candidate;
                                jumped = true;
                            }
                        }
                    }
                }
                if jumped {
                    // an extrapolated point may land past the fixed point; the
                    // sign of the following step says nothing about oscillation
                    history = None;
                    prev_step = None;
                } else {
                    history = Some((x, fx));
                }
            }

            x = project(next);
            fx = map(x)?;
        }
        Err(Error::NoConvergence {
            last: x,
            iterations: self.max_iter,
        })
    }
}
