use std::path::Path;

use pcn_core::protocol::{PaymentRequest, ProtocolConfig};
use pcn_core::sim::SimConfig;
use serde::Deserialize;

use crate::CliError;

/// One file describes every subcommand; each reads only its own section.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every section's seed; `--seed` overrides this.
    pub seed: Option<u64>,
    pub allocation: AllocationSpec,
    /// Network, workload and routing for `route-sim`.
    pub sim: Option<SimConfig>,
    pub protocol: ProtocolSpec,
    pub ccbt: CcbtSpec,
    pub choice: ChoiceSpec,
    pub sweep: SweepSpec,
    pub deadlock: DeadlockSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocationSpec {
    pub nodes: usize,
    pub candidates: usize,
    pub clients: usize,
    pub omega: f64,
    pub zeta_per_hop: f64,
    pub delta_per_hop: f64,
    pub eps_per_hop: f64,
    /// Largest candidate count the exact solver accepts.
    pub exact_bound: usize,
    pub seed: u64,
}

impl Default for AllocationSpec {
    fn default() -> Self {
        AllocationSpec {
            nodes: 40,
            candidates: 8,
            clients: 20,
            omega: 1.0,
            zeta_per_hop: 0.02,
            delta_per_hop: 0.01,
            eps_per_hop: 0.05,
            exact_bound: 20,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSpec {
    pub net: ProtocolConfig,
    /// Random payments drawn when `requests` is empty.
    pub payments: usize,
    /// Random adversary actions.
    pub adversary_actions: usize,
    pub requests: Vec<PaymentRequest>,
    pub seed: u64,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec {
            net: ProtocolConfig::default(),
            payments: 10,
            adversary_actions: 0,
            requests: Vec::new(),
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcbtSpec {
    pub n_cc: Vec<usize>,
    pub replicates: usize,
    pub duration: Option<f64>,
}

impl Default for CcbtSpec {
    fn default() -> Self {
        CcbtSpec { n_cc: (1..=10).collect(), replicates: 4, duration: None }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChoiceSpec {
    pub duration: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeadlockSpec {
    pub duration: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Allocation trade-off weights, solved on the `allocation` instance.
    pub omega: Vec<f64>,
    /// Price update intervals, each run on the `sim` config.
    pub tau: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { omega: vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0], tau: vec![0.1, 0.2, 0.4, 0.8] }
    }
}

pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
