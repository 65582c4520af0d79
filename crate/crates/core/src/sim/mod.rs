//! Deterministic discrete-event simulation of a payment channel network
//! running the price-based routing protocol.

mod ccbt;
mod config;
mod engine;
pub mod fluid;
mod metrics;
mod studies;

use thiserror::Error;

use crate::topology::TopologyError;

pub use ccbt::{ccbt_fit, ccbt_throughput, is_unimodal, CcbtFit, CcbtParams};
pub use config::{
    ChannelSpec, ContentionSpec, ControlMode, NetworkSpec, RoutingParams, SimConfig, StreamSpec, WorkloadSpec,
};
pub use engine::{ComplianceReport, Event, EventKind, SimOutcome, TracePoint, TxRecord};
pub use metrics::{compute_ntp, compute_tsr, LatencySummary};
pub use studies::{
    ccbt_base_config, choice_base_config, concurrent_channel_sweep, deadlock_report, deadlock_scenario,
    routing_choice_study, ChoiceRow, DeadlockReport, SweepPoint,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("fit error: {0}")]
    Fit(String),
}

/// Runs one simulation. Identical configs give identical outcomes.
pub fn run(config: &SimConfig) -> Result<SimOutcome, SimError> {
    engine::Engine::new(config)?.run()
}
