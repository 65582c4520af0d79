use std::collections::BTreeSet;

use pcn_core::allocation::{
    balanced_cost, double_greedy, optimal_assignment, solve_exact, AllocationInstance, AssignmentPlan, DeploymentPlan,
};
use pcn_core::routing::{split_amounts, split_demand, Demand, FlowStats, PriceState, QueuedTu, SchedulePolicy, TuQueue};
use pcn_core::sim::{run, ControlMode, NetworkSpec, SimConfig, WorkloadSpec};
use pcn_core::topology::{
    candidate_paths, generate_small_world, hop_matrix, ChannelId, DirectedChannel, NodeId, PathKind, PcnGraph,
};
use proptest::prelude::*;

fn instance_strategy() -> impl Strategy<Value = AllocationInstance> {
    (2usize..=6, 1usize..=8, 0.0f64..3.0).prop_flat_map(|(z, m, omega)| {
        let sym = move || {
            proptest::collection::vec(0.0f64..1.0, z * z).prop_map(move |v| {
                (0..z)
                    .map(|n| (0..z).map(|l| if n == l { 0.0 } else { v[n.min(l) * z + n.max(l)] }).collect())
                    .collect::<Vec<Vec<f64>>>()
            })
        };
        (proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, z), m), sym(), sym()).prop_map(
            move |(zeta, delta, eps)| {
                let ids = |k: usize| (0..k as u32).map(NodeId).collect();
                AllocationInstance::new(ids(m), ids(z), zeta, delta, eps, omega).unwrap()
            },
        )
    })
}

fn single_plan(z: usize, n: usize) -> DeploymentPlan {
    DeploymentPlan::from_indices(z, &[n])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_is_no_worse_than_any_other_plan(inst in instance_strategy(), seed in any::<u64>()) {
        let z = inst.candidates().len();
        let exact = solve_exact(&inst).unwrap().solution.cost;
        let dg = double_greedy(&inst, seed).unwrap();
        prop_assert!(exact <= dg.cost + 1e-9);
        for n in 0..z {
            let x = single_plan(z, n);
            let y = optimal_assignment(&inst, &x).unwrap();
            prop_assert!(exact <= balanced_cost(&inst, &x, &y).unwrap() + 1e-9);
        }
    }

    #[test]
    fn optimal_assignment_beats_every_single_move(inst in instance_strategy(), mask in 1u32..64) {
        let z = inst.candidates().len();
        let members: Vec<usize> = (0..z).filter(|n| mask >> n & 1 == 1).collect();
        prop_assume!(!members.is_empty());
        let x = DeploymentPlan::from_indices(z, &members);
        let y = optimal_assignment(&inst, &x).unwrap();
        let base = balanced_cost(&inst, &x, &y).unwrap();
        for c in 0..inst.clients().len() {
            for &n in &members {
                let mut moved = y.as_slice().to_vec();
                moved[c] = n;
                let alt = balanced_cost(&inst, &x, &AssignmentPlan::new(moved)).unwrap();
                prop_assert!(base <= alt + 1e-9);
            }
        }
    }

    #[test]
    fn split_keeps_amount_and_bounds(amount in 0.01f64..500.0, min_tu in 0.5f64..3.0, extra in 0.0f64..10.0) {
        let max_tu = min_tu + extra;
        let parts = split_amounts(amount, min_tu, max_tu);
        prop_assert!((parts.iter().sum::<f64>() - amount).abs() < 1e-9 * amount.max(1.0));
        prop_assert!(parts.iter().all(|&p| p > 0.0 && p <= max_tu + 1e-12));
        prop_assert!(parts.iter().filter(|&&p| p < min_tu - 1e-12).count() <= 1);
    }

    #[test]
    fn split_demand_follows_rates(amount in 1.0f64..200.0, rates in proptest::collection::vec(0.0f64..5.0, 1..5)) {
        let d = Demand { tid: 7, source: NodeId(0), dest: NodeId(1), amount, deadline: 3.0 };
        let mut next = 100;
        let units = split_demand(&d, 1.0, 4.0, &rates, &mut next).unwrap();
        prop_assert_eq!(next, 100 + units.len() as u64);
        let ids: BTreeSet<u64> = units.iter().map(|u| u.tuid).collect();
        prop_assert_eq!(ids.len(), units.len());
        prop_assert!((units.iter().map(|u| u.amount).sum::<f64>() - amount).abs() < 1e-9 * amount);
        let total: f64 = rates.iter().sum();
        for u in &units {
            prop_assert!(u.path < rates.len());
            prop_assert!(total == 0.0 || rates[u.path] > 0.0);
        }
    }

    #[test]
    fn prices_stay_nonnegative_and_antisymmetric(
        steps in proptest::collection::vec((0.0f64..20.0, 0.0f64..20.0), 1..50),
    ) {
        let chan = ChannelId(0);
        let ab = DirectedChannel { chan, forward: true };
        let mut p = PriceState::new(1, 0.01, 0.01, 0.1);
        for (a, b) in steps {
            let stats = FlowStats { n_a: a, n_b: b, m_a: a, m_b: b, delta_lockup: 1.0 };
            prop_assert!(p.update_capacity_price(chan, &stats, 10.0) >= 0.0);
            let (mu_ab, mu_ba) = p.update_imbalance_price(chan, &stats);
            prop_assert!((mu_ab + mu_ba).abs() < 1e-12);
            prop_assert!((p.channel_price(ab) + p.channel_price(ab.reverse()) - 4.0 * p.lambda(chan)).abs() < 1e-9);
            prop_assert!(p.forwarding_fee(ab) >= 0.0);
        }
    }

    #[test]
    fn queue_pops_in_policy_order(stamps in proptest::collection::vec(0u32..1000, 1..30), lifo in any::<bool>()) {
        let policy = if lifo { SchedulePolicy::Lifo } else { SchedulePolicy::Fifo };
        let mut q = TuQueue::new(policy);
        for (i, &t) in stamps.iter().enumerate() {
            q.push(QueuedTu { tuid: i as u64, amount: 1.0, deadline: 10.0, enqueued_at: f64::from(t) });
        }
        let mut prev: Option<f64> = None;
        while let Ok(tu) = q.pop() {
            if let Some(p) = prev {
                let ordered = if lifo { tu.enqueued_at <= p } else { tu.enqueued_at >= p };
                prop_assert!(ordered);
            }
            prev = Some(tu.enqueued_at);
        }
        prop_assert!(q.is_empty());
    }

    #[test]
    fn small_world_is_connected_and_seeded(n in 6usize..60, half in 1usize..3, p in 0.0f64..1.0, seed in any::<u64>()) {
        let g = generate_small_world(n, 2 * half, p, seed).unwrap();
        prop_assert_eq!(g.node_count(), n);
        prop_assert_eq!(g.channel_count(), n * half);
        prop_assert!(g.is_connected());
        prop_assert_eq!(g.to_text(), generate_small_world(n, 2 * half, p, seed).unwrap().to_text());
        let h = hop_matrix(&g).unwrap();
        for a in g.nodes() {
            prop_assert_eq!(h.get(a, a), 0);
            for b in g.nodes() {
                prop_assert_eq!(h.get(a, b), h.get(b, a));
            }
        }
    }

    #[test]
    fn candidate_paths_are_valid(seed in any::<u64>(), k in 1usize..6, kind_ix in 0usize..4, s in 0u32..20, e in 0u32..20) {
        prop_assume!(s != e);
        let g = generate_small_world(20, 4, 0.3, seed).unwrap();
        let g = pcn_core::topology::assign_capacities(g, 10.0, 403.0, 152.0, seed).unwrap();
        let kind = PathKind::ALL[kind_ix];
        let paths = candidate_paths(&g, NodeId(s), NodeId(e), k, kind);
        prop_assert!(!paths.is_empty() && paths.len() <= k);
        let mut used = BTreeSet::new();
        for p in &paths {
            prop_assert_eq!(p.source(), NodeId(s));
            prop_assert_eq!(p.dest(), NodeId(e));
            prop_assert_eq!(p.hops.len(), p.channels.len() + 1);
            let distinct: BTreeSet<NodeId> = p.hops.iter().copied().collect();
            prop_assert_eq!(distinct.len(), p.hops.len());
            for (w, &c) in p.hops.windows(2).zip(&p.channels) {
                let ch = g.channel(c);
                prop_assert!((ch.a, ch.b) == (w[0], w[1]) || (ch.b, ch.a) == (w[0], w[1]));
            }
            if matches!(kind, PathKind::Edw | PathKind::Eds) {
                for &c in &p.channels {
                    prop_assert!(used.insert(c), "channel {:?} reused", c);
                }
            }
        }
    }

    #[test]
    fn htlc_sequences_conserve_funds(ops in proptest::collection::vec((any::<bool>(), 0u8..3, 0.1f64..5.0), 1..60)) {
        let mut g = PcnGraph::new();
        let a = g.add_node(pcn_core::topology::NodeRole::Client);
        let b = g.add_node(pcn_core::topology::NodeRole::Client);
        let chan = g.add_channel(a, b, 20.0, 20.0).unwrap();
        let mut pending: Vec<(DirectedChannel, f64)> = Vec::new();
        for (forward, op, amount) in ops {
            let dir = DirectedChannel { chan, forward };
            match op {
                0 => {
                    if g.lock(dir, amount).is_ok() {
                        pending.push((dir, amount));
                    }
                }
                1 => {
                    if let Some((d, x)) = pending.pop() {
                        g.settle(d, x).unwrap();
                    }
                }
                _ => {
                    if let Some((d, x)) = pending.pop() {
                        g.cancel(d, x).unwrap();
                    }
                }
            }
            prop_assert!(g.conservation_error() < 1e-9);
            prop_assert!(g.channel(chan).balance(true) >= 0.0 && g.channel(chan).balance(false) >= 0.0);
        }
    }
}

fn small_sim(seed: u64, control: ControlMode, kind: PathKind, policy: SchedulePolicy) -> SimConfig {
    let mut cfg = SimConfig {
        seed,
        duration: 8.0,
        control,
        network: NetworkSpec::SmallWorld {
            nodes: 16,
            ring_degree: 4,
            rewire_p: 0.2,
            min_cap: 10.0,
            mean_cap: 120.0,
            median_cap: 60.0,
        },
        workload: WorkloadSpec::Poisson {
            pairs: 12,
            reciprocal: seed % 2 == 0,
            tx_rate: 1.0,
            amount_median: 4.0,
            amount_mean: 8.0,
            whale_fraction: 0.05,
            whale_amount: 300.0,
        },
        ..SimConfig::default()
    };
    cfg.routing.path_kind = kind;
    cfg.routing.policy = policy;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_conserves_and_counts(
        seed in any::<u64>(),
        share in any::<bool>(),
        kind_ix in 0usize..4,
        policy_ix in 0usize..4,
    ) {
        let control = if share { ControlMode::Share } else { ControlMode::Off };
        let cfg = small_sim(seed, control, PathKind::ALL[kind_ix], SchedulePolicy::ALL[policy_ix]);
        let out = run(&cfg).unwrap();
        prop_assert!(out.max_conservation_error < 1e-6);
        prop_assert!(out.completed <= out.generated);
        prop_assert_eq!(out.records.len() as u64, out.generated);
        prop_assert_eq!(out.records.iter().filter(|r| r.completed).count() as u64, out.completed);
        prop_assert!(out.completed_value <= out.generated_value + 1e-9);
        prop_assert!((0.0..=1.0).contains(&out.tsr) && (0.0..=1.0).contains(&out.ntp));
        prop_assert!(out.records.iter().all(|r| !r.completed || r.end >= r.arrival));
        prop_assert!((out.final_graph.total_funds() - run(&cfg).unwrap().final_graph.total_funds()).abs() == 0.0);
    }
}

#[test]
fn simulation_is_deterministic_per_seed() {
    let cfg = small_sim(11, ControlMode::Share, PathKind::Edw, SchedulePolicy::Lifo);
    let a = run(&cfg).unwrap();
    assert_eq!(a, run(&cfg).unwrap());
    let other = run(&SimConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.records, other.records);
}
