//! Per-layer statistics over independently sampled (network, masks, inputs)
//! instances.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{sample_inputs, ForwardTrace, GradientTrace, InputId, Network, NetworkConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    QAa,
    CAb,
    GAa,
    GAb,
    GTildeAb,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::QAa, Metric::CAb, Metric::GAa, Metric::GAb, Metric::GTildeAb];
    pub const GRADIENT: [Metric; 3] = [Metric::GAa, Metric::GAb, Metric::GTildeAb];

    pub fn name(self) -> &'static str {
        match self {
            Metric::QAa => "q_aa",
            Metric::CAb => "c_ab",
            Metric::GAa => "g_aa",
            Metric::GAb => "g_ab",
            Metric::GTildeAb => "g_tilde_ab",
        }
    }

    fn needs_backward(self) -> bool {
        matches!(self, Metric::GAa | Metric::GAb | Metric::GTildeAb)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric {s:?}")))
    }
}

impl TryFrom<String> for Metric {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> Self {
        m.name().to_owned()
    }
}

/// Gradient metrics of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerGradMetrics {
    pub g_aa: f64,
    pub g_ab: f64,
    pub g_tilde_ab: f64,
}

/// Per-layer `g_aa = (1/N²) Σ_ij (∂E_a/∂W_ij)²`,
/// `g_ab = |(1/N²) Σ_ij ∂E_a/∂W_ij ∂E_b/∂W_ij|` and
/// `g̃_ab = (1/N²) Σ_ij |∂E_a/∂W_ij ∂E_b/∂W_ij|`.
///
/// `∂E/∂W^l = δ^l (u^l)ᵀ` has rank one, so each double sum is a product of
/// two single sums and no N × N matrix is formed.
pub fn gradient_metrics(ga: &GradientTrace, gb: &GradientTrace) -> Result<Vec<LayerGradMetrics>> {
    if ga.deltas.len() != gb.deltas.len() {
        return Err(Error::DimensionMismatch {
            expected: ga.deltas.len(),
            found: gb.deltas.len(),
        });
    }
    let mut out = Vec::with_capacity(ga.deltas.len());
    for l in 0..ga.deltas.len() {
        let (da, db) = (&ga.deltas[l], &gb.deltas[l]);
        let (ua, ub) = (&ga.scaled_inputs[l], &gb.scaled_inputs[l]);
        if da.len() != db.len() {
            return Err(Error::DimensionMismatch {
                expected: da.len(),
                found: db.len(),
            });
        }
        let n = da.len() as f64;
        let mut s = [0.0f64; 3];
        for i in 0..da.len() {
            s[0] += da[i] * da[i];
            s[1] += da[i] * db[i];
            s[2] += (da[i] * db[i]).abs();
        }
        let mut t = [0.0f64; 3];
        for j in 0..ua.len() {
            t[0] += ua[j] * ua[j];
            t[1] += ua[j] * ub[j];
            t[2] += (ua[j] * ub[j]).abs();
        }
        out.push(LayerGradMetrics {
            g_aa: (s[0] / n) * (t[0] / n),
            g_ab: ((s[1] / n) * (t[1] / n)).abs(),
            g_tilde_ab: (s[2] / n) * (t[2] / n),
        });
    }
    Ok(out)
}

/// Per-layer `(1/N) Σ z_a²`.
pub fn layer_lengths(trace: &ForwardTrace) -> Vec<f64> {
    trace
        .pre_activations
        .iter()
        .map(|z| z.dot(z) / z.len() as f64)
        .collect()
}

/// Per-layer `z_a·z_b / (|z_a| |z_b|)`.
pub fn layer_correlations(a: &ForwardTrace, b: &ForwardTrace) -> Vec<f64> {
    a.pre_activations
        .iter()
        .zip(&b.pre_activations)
        .map(|(za, zb)| za.dot(zb) / (za.dot(za) * zb.dot(zb)).sqrt())
        .collect()
}

/// Length and correlation of the input pair fed to every instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub q0: f64,
    pub c0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub metric: Metric,
    /// index `l − 1` holds layer `l`
    pub per_layer_mean: Vec<f64>,
    /// Bessel-corrected; NaN when `n_instances = 1`
    pub per_layer_variance: Vec<f64>,
    /// `√(variance / n_instances)`
    pub per_layer_stderr: Vec<f64>,
    pub n_instances: usize,
}

impl EnsembleStats {
    /// Two-pass mean and variance of `samples[instance][layer]`, summed in
    /// instance order.
    pub fn from_samples(metric: Metric, samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::InvalidConfig("no instances".to_owned()));
        }
        let depth = samples[0].len();
        let mut mean = vec![0.0; depth];
        for s in samples {
            if s.len() != depth {
                return Err(Error::DimensionMismatch {
                    expected: depth,
                    found: s.len(),
                });
            }
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut variance = vec![0.0; depth];
        for s in samples {
            for ((v, x), m) in variance.iter_mut().zip(s).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        if n > 1 {
            variance.iter_mut().for_each(|v| *v /= (n - 1) as f64);
        } else {
            variance.iter_mut().for_each(|v| *v = f64::NAN);
        }
        let stderr = variance.iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Self {
            metric,
            per_layer_mean: mean,
            per_layer_variance: variance,
            per_layer_stderr: stderr,
            n_instances: n,
        })
    }
}

/// Per-layer values of the requested metrics for one instance.
pub fn instance_metrics(net: &Network, inputs: InputSpec, metrics: &[Metric]) -> Result<BTreeMap<Metric, Vec<f64>>> {
    let cfg = &net.cfg;
    let (xa, xb) = sample_inputs(cfg.width, inputs.q0, inputs.c0, cfg.seed, net.instance)?;
    let single = metrics.iter().all(|&m| m == Metric::QAa);
    let traces = if single {
        net.forward_many(&[(&xa, InputId::A)])?
    } else {
        net.forward_many(&[(&xa, InputId::A), (&xb, InputId::B)])?
    };
    let mut out = BTreeMap::new();
    if metrics.contains(&Metric::QAa) {
        out.insert(Metric::QAa, layer_lengths(&traces[0]));
    }
    if metrics.contains(&Metric::CAb) {
        out.insert(Metric::CAb, layer_correlations(&traces[0], &traces[1]));
    }
    if metrics.iter().any(|m| m.needs_backward()) {
        let grads = net.backward_many(&traces)?;
        let g = gradient_metrics(&grads[0], &grads[1])?;
        for &m in metrics {
            let pick: fn(&LayerGradMetrics) -> f64 = match m {
                Metric::GAa => |x| x.g_aa,
                Metric::GAb => |x| x.g_ab,
                Metric::GTildeAb => |x| x.g_tilde_ab,
                _ => continue,
            };
            out.insert(m, g.iter().map(pick).collect());
        }
    }
    Ok(out)
}

/// Ensemble over instances `0..n_instances` of `cfg`.
pub fn ensemble_run(
    cfg: &NetworkConfig,
    n_instances: usize,
    inputs: InputSpec,
    metrics: &[Metric],
) -> Result<BTreeMap<Metric, EnsembleStats>> {
    let ids: Vec<u64> = (0..n_instances as u64).collect();
    ensemble_run_instances(cfg, &ids, inputs, metrics)
}

/// Ensemble over the given instance indices. Instances run in parallel on the
/// current rayon pool; results are reduced in the order given, so the output
/// does not depend on the thread count.
pub fn ensemble_run_instances(
    cfg: &NetworkConfig,
    instances: &[u64],
    inputs: InputSpec,
    metrics: &[Metric],
) -> Result<BTreeMap<Metric, EnsembleStats>> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::InvalidConfig("need at least one instance".to_owned()));
    }
    if metrics.is_empty() {
        return Err(Error::InvalidConfig("no metrics requested".to_owned()));
    }
    let per_instance: Vec<BTreeMap<Metric, Vec<f64>>> = instances
        .par_iter()
        .map(|&i| instance_metrics(&Network::new(*cfg, i)?, inputs, metrics))
        .collect::<Result<_>>()?;

    let mut out = BTreeMap::new();
    for &m in metrics {
        let samples: Vec<Vec<f64>> = per_instance.iter().map(|r| r[&m].clone()).collect();
        out.insert(m, EnsembleStats::from_samples(m, &samples)?);
    }
    Ok(out)
}
