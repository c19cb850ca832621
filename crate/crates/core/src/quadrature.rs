//! Gaussian expectations `∫Dz f(z)` and `∫Dz1 Dz2 f(z1, z2)` under the
//! standard normal measure.
//!
//! Two integrators share one [`QuadratureRule`]:
//!
//! * the Gauss–Hermite tensor rule ([`QuadratureRule::expect1`],
//!   [`QuadratureRule::expect2`]), exact for polynomials of degree
//!   `2·order − 1`;
//! * a composite Gauss–Legendre rule over the pre-activation variable
//!   ([`QuadratureRule::expect_normal`], [`QuadratureRule::expect_bivariate`])
//!   that places panel edges on the kinks of piecewise activations and keeps
//!   panels no wider than the integrand's features. The mean-field maps use
//!   this one: Gauss–Hermite nodes are spaced `O(1/√order)` apart in `z`, which
//!   cannot resolve `tanh(√q z)` once `q` is large, and no Gauss–Hermite order
//!   integrates a step such as `HardTanh′²` accurately.
//!
//! Nodes of both families are computed at construction (Golub–Welsch followed
//! by Newton polishing), so any order in `2..=512` is available.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest supported Gauss–Hermite order.
pub const MAX_ORDER: usize = 512;

/// Default Gauss–Hermite order used by the mean-field routines and the CLI.
pub const DEFAULT_ORDER: usize = 64;

/// Correlations are pulled this far inside `[-1, 1]` before `√(1 − c²)` is
/// taken.
pub const CORRELATION_CLAMP: f64 = 1e-12;

// Truncation of the composite rule, in standard deviations. The mass beyond
// is below 2e-19.
const TAIL_SIGMAS: f64 = 9.0;

// Panel width (in pre-activation units) next to kinks and the origin. Every
// shipped activation varies on a unit scale.
const MAX_PANEL_WIDTH: f64 = 2.0;

// Away from the origin panels may grow to this fraction of their distance
// from it.
const GRADING: f64 = 0.25;

/// Gauss–Hermite nodes and weights for the standard normal measure, together
/// with the Gauss–Legendre panel rule used by the composite integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    panel_nodes: Vec<f64>,
    panel_weights: Vec<f64>,
}

impl QuadratureRule {
    /// Builds the rule of the given order. Orders outside `2..=512` are
    /// rejected.
    pub fn new(order: usize) -> Result<Self> {
        if !(2..=MAX_ORDER).contains(&order) {
            return Err(Error::InvalidOrder(order));
        }
        let (nodes, weights) = gauss_hermite(order);
        let (panel_nodes, panel_weights) = gauss_legendre(panel_order(order));
        Ok(Self {
            nodes,
            weights,
            panel_nodes,
            panel_weights,
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Abscissae, strictly increasing and symmetric about zero.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights, normalised to sum to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of Gauss–Legendre nodes per panel of the composite integrator.
    pub fn panel_order(&self) -> usize {
        self.panel_nodes.len()
    }

    /// `Σ_i w_i f(z_i)`, the Gauss–Hermite estimate of `∫Dz f(z)`.
    pub fn expect1<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        let mut acc = 0.0;
        for (&z, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * finite(f(z), z)?;
        }
        Ok(acc)
    }

    /// `Σ_ij w_i w_j f(z_i, z_j)`, the tensor-product estimate of
    /// `∫Dz1 Dz2 f(z1, z2)`.
    ///
    /// `c` is only validated here; building `u1`, `u2` from it is up to the
    /// caller (see [`QuadratureRule::expect_bivariate`] for a version that
    /// does the substitution itself).
    pub fn expect2<F>(&self, f: F, c: f64) -> Result<f64>
    where
        F: Fn(f64, f64) -> f64,
    {
        check_correlation(c)?;
        let mut acc = 0.0;
        for (&z1, &w1) in self.nodes.iter().zip(&self.weights) {
            let mut row = 0.0;
            for (&z2, &w2) in self.nodes.iter().zip(&self.weights) {
                row += w2 * finite(f(z1, z2), z2)?;
            }
            acc += w1 * row;
        }
        Ok(acc)
    }

    /// `E[f(mean + std·Z)]` for `Z ~ N(0, 1)`, where `f` is smooth except at
    /// the points listed in `kinks`.
    pub fn expect_normal<F>(&self, mean: f64, std: f64, kinks: &[f64], f: F) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        if !(std >= 0.0) || !mean.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "normal expectation needs finite mean and std >= 0 (got {mean}, {std})"
            )));
        }
        self.composite(mean, std, kinks, MAX_PANEL_WIDTH, |u| finite(f(u), u))
    }

    /// `E[f(u1, u2)]` with `u1 = √q_a z1` and
    /// `u2 = √q_b (c z1 + √(1 − c²) z2)`.
    ///
    /// `kinks` lists the non-smooth points of `f` in either argument. The
    /// integral is evaluated as an outer expectation over `u1` of the
    /// conditional expectation over `u2 | u1`. At `|c| = 1` the integral
    /// collapses to one dimension; other values of `c` are clamped to
    /// `±(1 − 1e-12)` after validation.
    pub fn expect_bivariate<F>(&self, q_a: f64, q_b: f64, c: f64, kinks: &[f64], f: F) -> Result<f64>
    where
        F: Fn(f64, f64) -> f64,
    {
        check_correlation(c)?;
        for q in [q_a, q_b] {
            if !(q >= 0.0) || !q.is_finite() {
                return Err(Error::NegativeLength(q));
            }
        }
        let (sa, sb) = (q_a.sqrt(), q_b.sqrt());
        if c.abs() == 1.0 && sa > 0.0 {
            // u2 = ±(sb/sa) u1 exactly
            let slope = c * sb / sa;
            let mut breaks: Vec<f64> = kinks.to_vec();
            if slope != 0.0 {
                breaks.extend(kinks.iter().map(|t| t / slope));
            }
            let width = MAX_PANEL_WIDTH / slope.abs().max(1.0);
            return self.composite(0.0, sa, &breaks, width, |u1| finite(f(u1, slope * u1), u1));
        }
        let c = clamp_correlation(c);
        let cond_std = sb * (1.0 - c * c).sqrt();

        if sa == 0.0 {
            return self.composite(0.0, sb, kinks, MAX_PANEL_WIDTH, |u2| finite(f(0.0, u2), u2));
        }

        // E[u2 | u1] = slope · u1
        let slope = c * sb / sa;
        let mut breaks: Vec<f64> = kinks.to_vec();
        if slope.abs() > f64::MIN_POSITIVE {
            breaks.extend(kinks.iter().map(|t| t / slope));
        }
        // in u1 the activation bends on a scale 1/|slope|, and where the
        // conditional mean crosses a kink the inner integral bends on a scale
        // cond_std/|slope|
        let mut width = MAX_PANEL_WIDTH / slope.abs().max(1.0);
        if !kinks.is_empty() && slope != 0.0 {
            width = width.min(MAX_PANEL_WIDTH * cond_std / slope.abs());
        }

        self.composite(0.0, sa, &breaks, width, |u1| {
            let mean = slope * u1;
            let inner = self.composite(mean, cond_std, kinks, MAX_PANEL_WIDTH, |u2| {
                finite(f(u1, u2), u2)
            })?;
            Ok(inner)
        })
    }

    // ∫ g(u) N(u; mean, std²) du over [mean ± 9 std], split at `breaks` and
    // at the origin. Next to those points panels are `near_width` wide; they
    // widen to GRADING times the distance from the nearest one, but never
    // beyond 2 std. The panel count thus grows like log(std / near_width).
    fn composite<G>(&self, mean: f64, std: f64, breaks: &[f64], near_width: f64, mut g: G) -> Result<f64>
    where
        G: FnMut(f64) -> Result<f64>,
    {
        if std == 0.0 {
            return g(mean);
        }
        let lo = mean - TAIL_SIGMAS * std;
        let hi = mean + TAIL_SIGMAS * std;
        let mut foci: Vec<f64> = breaks
            .iter()
            .copied()
            .chain(std::iter::once(0.0))
            .filter(|&b| b.is_finite() && b > lo && b < hi)
            .collect();
        foci.sort_by(|a, b| a.total_cmp(b));
        foci.dedup();
        let mut edges = Vec::with_capacity(foci.len() + 2);
        edges.push((lo, false));
        edges.extend(foci.iter().map(|&f| (f, true)));
        edges.push((hi, false));

        let gauss_cap = 2.0 * std;
        let norm = 1.0 / (std * (2.0 * std::f64::consts::PI).sqrt());
        let mut acc = 0.0;
        for piece in edges.windows(2) {
            let ((a, a_focus), (b, b_focus)) = (piece[0], piece[1]);
            let mut left = a;
            while left < b {
                let mut graded = f64::INFINITY;
                if a_focus {
                    graded = graded.min(GRADING * (left - a));
                }
                if b_focus {
                    graded = graded.min(GRADING * (b - left) / (1.0 + GRADING));
                }
                let width = graded.max(near_width).min(gauss_cap);
                let mut right = if b - left < 1.5 * width { b } else { left + width };
                if right <= left {
                    right = b;
                }
                let mid = 0.5 * (left + right);
                let half = 0.5 * (right - left);
                let mut panel = 0.0;
                for (&x, &w) in self.panel_nodes.iter().zip(&self.panel_weights) {
                    let u = mid + half * x;
                    let t = (u - mean) / std;
                    panel += w * g(u)? * (-0.5 * t * t).exp();
                }
                acc += panel * half;
                left = right;
            }
        }
        Ok(acc * norm)
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::new(DEFAULT_ORDER).expect("default order is valid")
    }
}

/// Shorthand for [`QuadratureRule::new`].
pub fn make_rule(order: usize) -> Result<QuadratureRule> {
    QuadratureRule::new(order)
}

/// Clamps a correlation to `[-1 + 1e-12, 1 − 1e-12]`.
pub fn clamp_correlation(c: f64) -> f64 {
    c.clamp(-1.0 + CORRELATION_CLAMP, 1.0 - CORRELATION_CLAMP)
}

fn check_correlation(c: f64) -> Result<()> {
    if c.is_finite() && c.abs() <= 1.0 {
        Ok(())
    } else {
        Err(Error::CorrelationOutOfRange(c))
    }
}

fn finite(value: f64, at: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { at })
    }
}

fn panel_order(order: usize) -> usize {
    (order / 4).clamp(12, 32)
}

/// Gauss–Hermite rule for the standard normal measure.
///
/// The eigenvalues of the Jacobi matrix of the orthonormal probabilists'
/// Hermite polynomials (zero diagonal, off-diagonal `√k`) give the nodes;
/// each node is then polished by Newton's method and its weight taken from
/// the Christoffel function `1 / Σ_k ψ_k(x)²`.
fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i + 1 == j {
            (j as f64).sqrt()
        } else if j + 1 == i {
            (i as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let ev = hermite_eval(order, *x);
            let step = ev.ratio / (order as f64).sqrt();
            *x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }

    // exact symmetry
    let n = order;
    for i in 0..n / 2 {
        let m = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -m;
        nodes[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    let mut weights: Vec<f64> = nodes.iter().map(|&x| hermite_eval(order, x).christoffel).collect();
    for i in 0..n / 2 {
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

struct HermiteEval {
    /// ψ_n(x) / ψ_{n−1}(x)
    ratio: f64,
    /// 1 / Σ_{k<n} ψ_k(x)²
    christoffel: f64,
}

// Orthonormal recurrence ψ_{k+1} = (x ψ_k − √k ψ_{k−1}) / √(k+1), rescaled on
// the fly so that high orders at large |x| neither overflow nor underflow.
fn hermite_eval(order: usize, x: f64) -> HermiteEval {
    const BIG: f64 = 1e150;
    let mut prev = 0.0_f64;
    let mut cur = 1.0_f64;
    let mut sum = 0.0_f64;
    let mut log_scale = 0.0_f64;
    for k in 0..order {
        sum += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > BIG {
            prev /= BIG;
            cur /= BIG;
            sum /= BIG * BIG;
            log_scale += BIG.ln();
        }
    }
    HermiteEval {
        ratio: cur / prev,
        christoffel: (-sum.ln() - 2.0 * log_scale).exp(),
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut deriv = 1.0;
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            deriv = dp;
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        if dp.is_finite() {
            deriv = dp;
        }
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
