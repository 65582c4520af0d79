//! Fluid (rate-level) iteration of the price and rate updates on a single
//! channel carrying one flow in each direction.

use crate::routing::{FlowStats, PathRate, PriceState};
use crate::topology::{ChannelId, DirectedChannel, Tokens};

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct FluidParams {
    pub capacity: Tokens,
    /// Lock-up delay.
    pub delta: f64,
    pub tau: f64,
    pub kappa: f64,
    pub eta: f64,
    pub alpha: f64,
    pub t_fee: f64,
}

impl Default for FluidParams {
    fn default() -> Self {
        FluidParams { capacity: 10.0, delta: 1.0, tau: 0.2, kappa: 0.002, eta: 0.002, alpha: 1.0, t_fee: 0.1 }
    }
}

/// Runs `steps` periods from rates `start` and returns the `(r_ab, r_ba)`
/// rate after every period.
pub fn two_way_channel(params: &FluidParams, start: (f64, f64), steps: usize) -> Vec<(f64, f64)> {
    let chan = ChannelId(0);
    let ab = DirectedChannel { chan, forward: true };
    let mut prices = PriceState::new(1, params.kappa, params.eta, params.t_fee);
    let mut fwd = PathRate { rate: start.0, alpha: params.alpha };
    let mut rev = PathRate { rate: start.1, alpha: params.alpha };
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let stats = FlowStats {
            n_a: fwd.rate * params.delta,
            n_b: rev.rate * params.delta,
            m_a: fwd.rate * params.tau,
            m_b: rev.rate * params.tau,
            delta_lockup: params.delta,
        };
        prices.update_capacity_price(chan, &stats, params.capacity);
        prices.update_imbalance_price(chan, &stats);
        let p_fwd = prices.path_price(&[ab]);
        let p_rev = prices.path_price(&[ab.reverse()]);
        // Each direction is its own source-destination pair with one path.
        let (total_fwd, total_rev) = (fwd.rate, rev.rate);
        fwd.update(p_fwd, total_fwd);
        rev.update(p_rev, total_rev);
        out.push((fwd.rate, rev.rate));
    }
    out
}
