//! JSON experiment configuration. Every field has a default, so `{}` is a
//! valid document; command-line flags are applied on top.

use std::path::Path;

use mfdl_core::phase::{DEFAULT_COMPARISON_MULTIPLIER, DEFAULT_MULTIPLIER};
use mfdl_core::universality::{UniversalityEntry, DEFAULT_CHI1_TARGET};
use mfdl_core::Activation;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub quad_order: usize,
    pub instances: usize,
    pub lengthmap: LengthmapConfig,
    pub gradsim: GradsimConfig,
    pub universality: UniversalityConfig,
    pub phase: PhaseConfig,
    pub critical_line: CriticalLineConfig,
    pub fixed_point: FixedPointConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            quad_order: mfdl_core::quadrature::DEFAULT_ORDER,
            instances: 100,
            lengthmap: LengthmapConfig::default(),
            gradsim: GradsimConfig::default(),
            universality: UniversalityConfig::default(),
            phase: PhaseConfig::default(),
            critical_line: CriticalLineConfig::default(),
            fixed_point: FixedPointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    /// squared length q
    Q,
    /// correlation c
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthmapMode {
    /// iterates `q^l` (or `c^l`) against the layer index
    Layers,
    /// one application of the map over a grid of inputs
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    #[serde(default = "default_spacing")]
    pub spacing: Spacing,
}

fn default_spacing() -> Spacing {
    Spacing::Linear
}

impl GridSpec {
    pub fn points(&self) -> mfdl_core::Result<Vec<f64>> {
        match self.spacing {
            Spacing::Linear => mfdl_core::phase::linear_grid(self.lo, self.hi, self.n),
            Spacing::Log => mfdl_core::phase::log_grid(self.lo, self.hi, self.n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LengthmapConfig {
    pub activation: Activation,
    pub sigma_w_sq: f64,
    pub sigma_b_sq: f64,
    pub rhos: Vec<f64>,
    pub quantity: Quantity,
    pub mode: LengthmapMode,
    pub layers: usize,
    /// raw input length
    pub q0: f64,
    /// raw input correlation (quantity c)
    pub c0: f64,
    /// inputs of the map in `map` mode
    pub map_grid: GridSpec,
    /// add ensemble means (layers mode only)
    pub simulate: bool,
    pub width: usize,
}

impl Default for LengthmapConfig {
    fn default() -> Self {
        Self {
            activation: Activation::Linear,
            sigma_w_sq: 0.25,
            sigma_b_sq: 2.25,
            rhos: vec![1.0, 0.7, 0.4],
            quantity: Quantity::Q,
            mode: LengthmapMode::Map,
            layers: 20,
            q0: 1.0,
            c0: 0.5,
            map_grid: GridSpec {
                lo: 0.0,
                hi: 15.0,
                n: 61,
                spacing: Spacing::Linear,
            },
            simulate: false,
            width: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradsimConfig {
    pub activation: Activation,
    pub sigma_w_sq: f64,
    pub sigma_b_sq: f64,
    pub rho: f64,
    pub depth: usize,
    pub width: usize,
    /// input length; q* when absent
    pub q0: Option<f64>,
    /// input correlation; c* when absent
    pub c0: Option<f64>,
}

impl Default for GradsimConfig {
    fn default() -> Self {
        Self {
            activation: Activation::Linear,
            sigma_w_sq: 0.5,
            sigma_b_sq: 0.1,
            rho: 1.0,
            depth: 200,
            width: 1000,
            q0: None,
            c0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// every activation except erf at ρ ∈ {1, 0.7, 0.4}, N = 500
    Activations,
    /// tanh at ρ = 0.9, N ∈ {200, 500, 1000}
    Widths,
}

impl Preset {
    pub fn entries(self) -> Vec<UniversalityEntry> {
        match self {
            Preset::Activations => [Activation::Linear, Activation::ReLU, Activation::Tanh, Activation::HardTanh]
                .into_iter()
                .flat_map(|activation| {
                    [1.0, 0.7, 0.4].map(|rho| UniversalityEntry {
                        activation,
                        rho,
                        width: 500,
                        sigma_w_sq: None,
                    })
                })
                .collect(),
            Preset::Widths => [200, 500, 1000]
                .map(|width| UniversalityEntry {
                    activation: Activation::Tanh,
                    rho: 0.9,
                    width,
                    sigma_w_sq: None,
                })
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniversalityConfig {
    /// replaces `entries` when set
    pub preset: Option<Preset>,
    pub entries: Vec<UniversalityEntry>,
    pub depth: usize,
    pub sigma_b_sq: f64,
    pub c0: f64,
    /// χ1 used to pick σw² for entries without one
    pub chi1_target: f64,
    pub sigma_w_bracket: (f64, f64),
}

impl Default for UniversalityConfig {
    fn default() -> Self {
        Self {
            preset: None,
            entries: Preset::Activations.entries(),
            depth: 200,
            sigma_b_sq: 0.1,
            c0: 0.5,
            chi1_target: DEFAULT_CHI1_TARGET,
            sigma_w_bracket: (0.01, 20.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub activation: Activation,
    pub rho: f64,
    pub sigma_b_sq: f64,
    pub grid: GridSpec,
    pub multiplier: f64,
    pub comparison_multiplier: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            activation: Activation::Tanh,
            rho: 1.0,
            sigma_b_sq: 0.05,
            grid: GridSpec {
                lo: 1.0,
                hi: 4.0,
                n: 64,
                spacing: Spacing::Log,
            },
            multiplier: DEFAULT_MULTIPLIER,
            comparison_multiplier: DEFAULT_COMPARISON_MULTIPLIER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticalLineConfig {
    pub activation: Activation,
    pub rho: f64,
    pub sigma_b_sq: f64,
    pub bracket: (f64, f64),
}

impl Default for CriticalLineConfig {
    fn default() -> Self {
        Self {
            activation: Activation::Linear,
            rho: 1.0,
            sigma_b_sq: 0.05,
            bracket: (0.01, 10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    pub activation: Activation,
    pub sigma_w_sq: f64,
    pub sigma_b_sq: f64,
    pub rho: f64,
    pub q0: f64,
    pub c0: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            activation: Activation::Tanh,
            sigma_w_sq: 1.4,
            sigma_b_sq: 0.1,
            rho: 1.0,
            q0: 1.0,
            c0: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Applies a `section.field=value` override. The value is parsed as JSON
    /// and falls back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got {assignment:?}")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| CliError::Usage(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
        *self = serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("{key}: {e}")))?;
        Ok(())
    }
}
