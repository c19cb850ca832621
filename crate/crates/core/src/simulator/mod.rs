//! Finite-width Monte-Carlo simulation of random dropout networks.

pub mod ensemble;
pub mod network;
pub mod rng;

pub use ensemble::{
    ensemble_run, ensemble_run_instances, gradient_metrics, instance_metrics, layer_correlations, layer_lengths,
    EnsembleStats, InputSpec, LayerGradMetrics, Metric,
};
pub use network::{sample_inputs, DenseNetwork, ForwardTrace, GradientTrace, InputId, Network, NetworkConfig};
