use serde::{Deserialize, Serialize};

use crate::routing::SchedulePolicy;
use crate::topology::{PathKind, Tokens};

use super::SimError;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    /// Sources send at demand; no prices, pacing or windows.
    Off,
    /// Price-driven rates, paced sending and congestion windows.
    Share,
}

impl ControlMode {
    pub fn name(self) -> &'static str {
        match self {
            ControlMode::Off => "off",
            ControlMode::Share => "share",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub a: u32,
    pub b: u32,
    pub balance_ab: Tokens,
    pub balance_ba: Tokens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    SmallWorld {
        nodes: usize,
        ring_degree: usize,
        rewire_p: f64,
        min_cap: Tokens,
        mean_cap: Tokens,
        median_cap: Tokens,
    },
    Explicit {
        nodes: usize,
        channels: Vec<ChannelSpec>,
    },
    /// Hubs joined in a complete mesh with `n_cc` parallel channels per pair,
    /// each hub serving its own clients over single spokes.
    MultiStar {
        hubs: usize,
        clients_per_hub: usize,
        spoke_balance: Tokens,
        hub_balance: Tokens,
        n_cc: usize,
    },
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec::SmallWorld {
            nodes: 100,
            ring_degree: 4,
            rewire_p: 0.2,
            min_cap: 10.0,
            mean_cap: 403.0,
            median_cap: 152.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub source: u32,
    pub dest: u32,
    /// Tokens per second.
    pub rate: f64,
    /// Amount of each payment.
    pub unit: Tokens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    /// Poisson payments between randomly drawn pairs with log-normal amounts
    /// and a share of payments larger than any channel.
    Poisson {
        pairs: usize,
        /// Draw pairs in opposite-direction couples with equal demand.
        reciprocal: bool,
        tx_rate: f64,
        amount_median: Tokens,
        amount_mean: Tokens,
        whale_fraction: f64,
        whale_amount: Tokens,
    },
    /// Evenly spaced fixed-size payments per stream.
    Streams {
        streams: Vec<StreamSpec>,
    },
    None,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec::Poisson {
            pairs: 200,
            reciprocal: true,
            tx_rate: 0.5,
            amount_median: 4.0,
            amount_mean: 8.0,
            whale_fraction: 0.02,
            whale_amount: 5000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingParams {
    pub kappa: f64,
    pub eta: f64,
    pub alpha: f64,
    pub t_fee: f64,
    /// Price and probe period.
    pub tau: f64,
    /// Queue delay after which a TU is marked.
    pub mark_threshold: f64,
    pub beta: f64,
    pub gamma: f64,
    pub min_tu: Tokens,
    pub max_tu: Tokens,
    pub k: usize,
    pub path_kind: PathKind,
    pub policy: SchedulePolicy,
    pub queue_cap: Tokens,
    /// Payment deadline after arrival.
    pub timeout: f64,
    /// One-way latency per hop.
    pub hop_delay: f64,
    /// Tokens per second a channel direction can forward.
    pub process_rate: f64,
    /// Initial estimate of the lock-up delay used for `n_a`, `n_b`.
    pub delta_lockup: f64,
    pub initial_window: Tokens,
    /// Initial per-path rate; 0 means demand rate split over the paths.
    pub initial_rate: f64,
    /// Balance tolerance for the channel compliance check.
    pub eps_bal: f64,
    /// Periods averaged when measuring channel rates for compliance.
    pub balance_window: usize,
}

impl Default for RoutingParams {
    fn default() -> Self {
        RoutingParams {
            kappa: 0.002,
            eta: 0.01,
            alpha: 0.5,
            t_fee: 0.1,
            tau: 0.2,
            mark_threshold: 0.4,
            beta: 10.0,
            gamma: 0.1,
            min_tu: 1.0,
            max_tu: 4.0,
            k: 5,
            path_kind: PathKind::Edw,
            policy: SchedulePolicy::Fifo,
            queue_cap: 8000.0,
            timeout: 3.0,
            hop_delay: 0.02,
            process_rate: 200.0,
            delta_lockup: 0.1,
            initial_window: 40.0,
            initial_rate: 0.0,
            eps_bal: 1.0,
            balance_window: 25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentionSpec {
    /// Shared forwarding rate of each hub over its hub-to-hub channels; 0 disables.
    pub hub_rate: f64,
    /// Hub stall per batch and per parallel channel, in seconds.
    pub coherence: f64,
    pub batch_window: f64,
}

impl Default for ContentionSpec {
    fn default() -> Self {
        ContentionSpec { hub_rate: 0.0, coherence: 0.0, batch_window: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub duration: f64,
    /// Price periods excluded from steady-state metrics.
    pub warmup_periods: usize,
    pub epoch: f64,
    pub control: ControlMode,
    pub network: NetworkSpec,
    pub workload: WorkloadSpec,
    pub routing: RoutingParams,
    pub contention: ContentionSpec,
    /// Source-destination pairs whose delivered value is traced per period.
    pub trace_pairs: Vec<(u32, u32)>,
    /// Keep a per-payment event log in the outcome.
    pub record_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            duration: 60.0,
            warmup_periods: 10,
            epoch: 1.0,
            control: ControlMode::Share,
            network: NetworkSpec::default(),
            workload: WorkloadSpec::default(),
            routing: RoutingParams::default(),
            contention: ContentionSpec::default(),
            trace_pairs: Vec::new(),
            record_events: false,
        }
    }
}

impl SimConfig {
    pub fn warmup(&self) -> f64 {
        self.warmup_periods as f64 * self.routing.tau
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let r = &self.routing;
        let bad = |m: String| Err(SimError::Config(m));
        let positive = [
            ("kappa", r.kappa),
            ("eta", r.eta),
            ("alpha", r.alpha),
            ("tau", r.tau),
            ("mark_threshold", r.mark_threshold),
            ("beta", r.beta),
            ("gamma", r.gamma),
            ("min_tu", r.min_tu),
            ("timeout", r.timeout),
            ("process_rate", r.process_rate),
            ("delta_lockup", r.delta_lockup),
            ("epoch", self.epoch),
            ("duration", self.duration),
            ("batch_window", self.contention.batch_window),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(r.t_fee > 0.0 && r.t_fee < 1.0) {
            return bad(format!("t_fee = {} must lie in (0, 1)", r.t_fee));
        }
        if r.max_tu < r.min_tu {
            return bad(format!("max_tu {} below min_tu {}", r.max_tu, r.min_tu));
        }
        if r.k == 0 {
            return bad("k must be at least 1".into());
        }
        if r.hop_delay < 0.0 || r.queue_cap < 0.0 || r.initial_rate < 0.0 || r.initial_window < 0.0 {
            return bad("hop_delay, queue_cap, initial_rate and initial_window must be nonnegative".into());
        }
        if r.tau > self.epoch {
            return bad(format!("tau {} exceeds epoch {}", r.tau, self.epoch));
        }
        if self.duration <= self.warmup() {
            return bad(format!("duration {} does not exceed warm-up {}", self.duration, self.warmup()));
        }
        if r.balance_window == 0 {
            return bad("balance_window must be at least 1".into());
        }
        let c = &self.contention;
        if c.hub_rate < 0.0 || c.coherence < 0.0 {
            return bad("contention rates must be nonnegative".into());
        }
        match &self.workload {
            WorkloadSpec::Poisson { tx_rate, amount_median, amount_mean, whale_fraction, whale_amount, .. } => {
                if !(*tx_rate > 0.0 && *amount_median > 0.0 && amount_mean >= amount_median && *whale_amount > 0.0) {
                    return bad("poisson workload needs positive rate and amounts with mean >= median".into());
                }
                if !(0.0..=1.0).contains(whale_fraction) {
                    return bad(format!("whale_fraction = {whale_fraction} outside [0, 1]"));
                }
            }
            WorkloadSpec::Streams { streams } => {
                for s in streams {
                    if !(s.rate > 0.0 && s.unit > 0.0) || s.source == s.dest {
                        return bad(format!("invalid stream {} -> {}", s.source, s.dest));
                    }
                }
            }
            WorkloadSpec::None => {}
        }
        if let NetworkSpec::MultiStar { hubs, clients_per_hub, n_cc, .. } = &self.network {
            if *hubs < 2 || *clients_per_hub == 0 || *n_cc == 0 {
                return bad("multi_star needs at least 2 hubs, 1 client per hub and n_cc >= 1".into());
            }
        }
        Ok(())
    }
}
