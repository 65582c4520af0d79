use rayon::prelude::*;

use crate::routing::SchedulePolicy;
use crate::topology::{PathKind, Tokens};

use super::config::{ChannelSpec, ContentionSpec, NetworkSpec, RoutingParams, SimConfig, StreamSpec, WorkloadSpec};
use super::engine::SimOutcome;
use super::{run, SimError};

const A: u32 = 0;
const B: u32 = 1;
const C: u32 = 2;

/// Three nodes where `C` sits between `A` and `B` with 10 tokens per
/// direction on each channel. `A -> B` at 1 token/s, `C -> B` at 2 and
/// `B -> A` at 2, all as 1-token payments.
pub fn deadlock_scenario() -> SimConfig {
    let stream = |source, dest, rate| StreamSpec { source, dest, rate, unit: 1.0 };
    SimConfig {
        duration: 120.0,
        network: NetworkSpec::Explicit {
            nodes: 3,
            channels: vec![
                ChannelSpec { a: A, b: C, balance_ab: 10.0, balance_ba: 10.0 },
                ChannelSpec { a: C, b: B, balance_ab: 10.0, balance_ba: 10.0 },
            ],
        },
        workload: WorkloadSpec::Streams { streams: vec![stream(A, B, 1.0), stream(C, B, 2.0), stream(B, A, 2.0)] },
        routing: RoutingParams { k: 1, eta: 2.0, alpha: 0.5, initial_window: 10.0, ..RoutingParams::default() },
        trace_pairs: vec![(A, B), (B, A), (C, B)],
        ..SimConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeadlockReport {
    /// End of the last period with any `A <-> B` delivery, if deliveries stopped.
    pub collapse_time: Option<f64>,
    /// First traced time at which `C` had no spendable funds toward `B`.
    pub c_drained_at: Option<f64>,
    /// Mean delivered tokens/s over the measurement window.
    pub rate_ab: f64,
    pub rate_ba: f64,
    pub rate_cb: f64,
}

impl DeadlockReport {
    pub fn throughput(&self) -> f64 {
        self.rate_ab + self.rate_ba
    }
}

/// Summarizes a run of `deadlock_scenario` over `[from, to]`.
pub fn deadlock_report(outcome: &SimOutcome, from: f64, to: f64) -> DeadlockReport {
    let pos = |s: u32, e: u32| outcome.traced_pairs.iter().position(|p| p.0 .0 == s && p.1 .0 == e);
    let (ab, ba, cb) = (pos(A, B), pos(B, A), pos(C, B));
    let value = |tp: &super::TracePoint, i: Option<usize>| i.map_or(0.0, |i| tp.pair_value[i]);
    let last_delivery = outcome
        .trace
        .iter()
        .filter(|tp| value(tp, ab) + value(tp, ba) > 0.0)
        .map(|tp| tp.time)
        .fold(None, |_, t| Some(t));
    let end = outcome.trace.last().map_or(0.0, |tp| tp.time);
    let collapse_time = match last_delivery {
        None => Some(0.0),
        Some(t) if t + 5.0 < end => Some(t),
        Some(_) => None,
    };
    // The C-B channel is listed second with `a = C`, so its forward slot is 2.
    let c_drained_at = outcome.trace.iter().find(|tp| tp.balances.get(2).is_some_and(|b| *b <= 1e-9)).map(|tp| tp.time);
    let window: Vec<&super::TracePoint> =
        outcome.trace.iter().filter(|tp| tp.time > from + 1e-9 && tp.time <= to + 1e-9).collect();
    let span = (to - from).max(1e-9);
    let rate = |i| window.iter().map(|tp| value(tp, i)).sum::<Tokens>() / span;
    DeadlockReport { collapse_time, c_drained_at, rate_ab: rate(ab), rate_ba: rate(ba), rate_cb: rate(cb) }
}

/// Two hubs with `n_cc` parallel channels, a shared hub forwarding rate and a
/// per-batch coherence stall that grows with `n_cc`.
pub fn ccbt_base_config() -> SimConfig {
    SimConfig {
        duration: 40.0,
        network: NetworkSpec::MultiStar {
            hubs: 2,
            clients_per_hub: 10,
            spoke_balance: 5000.0,
            hub_balance: 20000.0,
            n_cc: 1,
        },
        workload: WorkloadSpec::Poisson {
            pairs: 40,
            reciprocal: true,
            tx_rate: 1.5,
            amount_median: 3.0,
            amount_mean: 4.0,
            whale_fraction: 0.0,
            whale_amount: 1.0,
        },
        routing: RoutingParams { process_rate: 30.0, initial_rate: 0.0, ..RoutingParams::default() },
        contention: ContentionSpec { hub_rate: 100.0, coherence: 0.004, batch_window: 0.1 },
        ..SimConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub n_cc: usize,
    pub ntp: f64,
    /// Delivered tokens per second after warm-up.
    pub throughput: f64,
}

/// Runs `base` for each parallel-channel count, averaging over `replicates`
/// consecutive seeds; each lane gets its own path.
pub fn concurrent_channel_sweep(
    base: &SimConfig,
    n_cc_values: &[usize],
    replicates: usize,
) -> Result<Vec<SweepPoint>, SimError> {
    let NetworkSpec::MultiStar { .. } = base.network else {
        return Err(SimError::Config("channel sweep needs a multi_star network".into()));
    };
    if replicates == 0 {
        return Err(SimError::Config("sweep needs at least one replicate".into()));
    }
    let jobs: Vec<(usize, u64)> =
        n_cc_values.iter().flat_map(|&n| (0..replicates as u64).map(move |r| (n, r))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(n, r)| {
            let mut cfg = base.clone();
            if let NetworkSpec::MultiStar { n_cc, .. } = &mut cfg.network {
                *n_cc = n;
            }
            cfg.routing.k = n.max(1);
            cfg.seed = base.seed.wrapping_add(r);
            let out = run(&cfg)?;
            let warm = cfg.warmup();
            let delivered: Tokens =
                out.records.iter().filter(|r| r.completed && r.arrival >= warm).map(|r| r.amount).sum();
            Ok((out.steady_ntp, delivered / (cfg.duration - warm)))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let reps = replicates as f64;
    Ok(n_cc_values
        .iter()
        .zip(runs.chunks(replicates))
        .map(|(&n_cc, chunk)| SweepPoint {
            n_cc,
            ntp: chunk.iter().map(|x| x.0).sum::<f64>() / reps,
            throughput: chunk.iter().map(|x| x.1).sum::<f64>() / reps,
        })
        .collect())
}

/// 100-node small world with one-way random pairs, so routes compete for
/// liquidity that only refills through other pairs' traffic.
pub fn choice_base_config() -> SimConfig {
    SimConfig {
        duration: 30.0,
        workload: WorkloadSpec::Poisson {
            pairs: 200,
            reciprocal: false,
            tx_rate: 0.5,
            amount_median: 4.0,
            amount_mean: 8.0,
            whale_fraction: 0.0,
            whale_amount: 1.0,
        },
        ..SimConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceRow {
    pub kind: PathKind,
    pub paths: usize,
    pub policy: SchedulePolicy,
    pub tsr: f64,
    pub ntp: f64,
}

pub const CHOICE_PATH_COUNTS: [usize; 4] = [1, 3, 5, 7];

/// Full cross product of path kind, path count and queue policy on the same
/// seeded workload. Rows come back in a fixed order regardless of threading.
pub fn routing_choice_study(base: &SimConfig) -> Result<Vec<ChoiceRow>, SimError> {
    let mut grid = Vec::new();
    for kind in PathKind::ALL {
        for paths in CHOICE_PATH_COUNTS {
            for policy in SchedulePolicy::ALL {
                grid.push((kind, paths, policy));
            }
        }
    }
    grid.par_iter()
        .map(|&(kind, paths, policy)| {
            let mut cfg = base.clone();
            cfg.routing.path_kind = kind;
            cfg.routing.k = paths;
            cfg.routing.policy = policy;
            let out = run(&cfg)?;
            Ok(ChoiceRow { kind, paths, policy, tsr: out.tsr, ntp: out.ntp })
        })
        .collect()
}
