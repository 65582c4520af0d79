//! Acceptance run: one line per criterion, each checked against an oracle
//! written here rather than reusing the library's own routines.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use pcn_core::allocation::{
    balanced_cost, double_greedy, small_world_instance, solve_exact, synchronization_cost, AllocationInstance,
    AssignmentPlan, DeploymentPlan, HopCostRates,
};
use pcn_core::protocol::{
    random_scenario, run_protocol, Attestation, Ias, PaymentStatus, ProtocolConfig, ProtocolOutcome,
};
use pcn_core::routing::SchedulePolicy;
use pcn_core::sim::fluid::{two_way_channel, FluidParams};
use pcn_core::sim::{
    ccbt_base_config, ccbt_fit, ccbt_throughput, choice_base_config, concurrent_channel_sweep, deadlock_scenario, run,
    CcbtParams, ControlMode, SimConfig,
};
use pcn_core::topology::{NodeId, PathKind, Tokens};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria whose failure is understood and recorded; any other failure
/// fails the run.
const KNOWN_RED: [usize; 2] = [7, 8];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// ---- allocation oracle ----

fn deployed(x: &[bool]) -> impl Iterator<Item = usize> + '_ {
    x.iter().enumerate().filter(|(_, d)| **d).map(|(n, _)| n)
}

/// Each client independently takes the hub minimizing its management cost
/// plus its share of synchronization traffic; ties go to the lowest index.
fn oracle_assign(inst: &AllocationInstance, x: &[bool]) -> Vec<usize> {
    (0..inst.clients().len())
        .map(|m| {
            let mut best = (usize::MAX, f64::INFINITY);
            for n in deployed(x) {
                let share: f64 = deployed(x).filter(|&l| l != n).map(|l| inst.delta(n, l)).sum();
                let c = inst.zeta(m, n) + inst.omega() * share;
                if c < best.1 {
                    best = (n, c);
                }
            }
            best.0
        })
        .collect()
}

fn oracle_cost(inst: &AllocationInstance, x: &[bool], y: &[usize]) -> f64 {
    let mgmt: f64 = y.iter().enumerate().map(|(m, &n)| inst.zeta(m, n)).sum();
    let mut load = vec![0usize; x.len()];
    for &n in y {
        load[n] += 1;
    }
    let mut sync = 0.0;
    for n in deployed(x) {
        for l in deployed(x).filter(|&l| l != n) {
            sync += inst.delta(n, l) * load[n] as f64 + inst.eps(n, l);
        }
    }
    mgmt + inst.omega() * sync
}

fn oracle_f_ub(inst: &AllocationInstance) -> f64 {
    let z = inst.candidates().len();
    let m = inst.clients().len();
    let worst: f64 = (0..m).map(|c| (0..z).map(|n| inst.zeta(c, n)).fold(0.0, f64::max)).sum();
    let mut sync = 0.0;
    for n in 0..z {
        for l in (0..z).filter(|&l| l != n) {
            sync += inst.delta(n, l) * m as f64 + inst.eps(n, l);
        }
    }
    worst + inst.omega() * sync
}

fn oracle_f(inst: &AllocationInstance, x: &[bool]) -> f64 {
    if !x.iter().any(|d| *d) {
        return oracle_f_ub(inst);
    }
    oracle_cost(inst, x, &oracle_assign(inst, x))
}

fn subsets(z: usize) -> impl Iterator<Item = Vec<bool>> {
    (1u32..1 << z).map(move |mask| (0..z).map(|n| mask >> n & 1 == 1).collect())
}

fn random_small_world(rng: &mut ChaCha8Rng, max_cand: usize) -> AllocationInstance {
    let z = rng.random_range(2..=max_cand);
    let m = rng.random_range(1..=20);
    let omega = [0.0, 0.01, 0.05, 0.2, 1.0, 5.0][rng.random_range(0..6)];
    small_world_instance(40, z, m, HopCostRates::default(), omega, rng.random()).expect("instance")
}

fn criterion_1_2() -> (Verdict, Verdict) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut mismatches, mut far, mut bad_witness, mut worst_lin) = (0, 0, 0, 0.0f64);
    for _ in 0..200 {
        let inst = random_small_world(&mut rng, 10);
        let ex = solve_exact(&inst).expect("exact solve");
        let z = inst.candidates().len();
        let mut best = f64::INFINITY;
        let mut best_oracle = f64::INFINITY;
        for x in subsets(z) {
            let y = oracle_assign(&inst, &x);
            let lib = balanced_cost(&inst, &DeploymentPlan::new(x.clone()), &AssignmentPlan::new(y.clone()))
                .expect("feasible plan");
            best = best.min(lib);
            best_oracle = best_oracle.min(oracle_cost(&inst, &x, &y));
        }
        if ex.solution.cost.to_bits() != best.to_bits() {
            mismatches += 1;
        }
        if (ex.solution.cost - best_oracle).abs() > 1e-9 {
            far += 1;
        }

        let (x, y) = (&ex.solution.deployment, &ex.solution.assignment);
        let w = &ex.witness;
        let mut ok = w.check(x, y).is_ok();
        for n in 0..z {
            for l in 0..z {
                let theta = u8::from(x.is_deployed(n) && x.is_deployed(l));
                ok &= w.theta(n, l) == theta;
                for c in 0..inst.clients().len() {
                    ok &= w.phi(n, l, c) == theta * u8::from(y.hub_of(c) == n);
                }
            }
        }
        if !ok {
            bad_witness += 1;
        }
        let cs = synchronization_cost(&inst, x, y).expect("sync cost");
        let lin = w.linearized_sync_cost(&inst);
        worst_lin = worst_lin.max((lin - cs).abs() / cs.abs().max(1.0));
    }
    let secs = t.elapsed().as_secs_f64();
    let c1 = verdict(
        mismatches == 0 && far == 0 && secs < 60.0,
        format!("200 instances, {mismatches} bit mismatches, {far} off the oracle by >1e-9, {secs:.2}s"),
    );
    let c2 = verdict(
        bad_witness == 0 && worst_lin <= 4.0 * f64::EPSILON,
        format!("{bad_witness} bad witnesses, max relative |C_S_lin - C_S| {worst_lin:.1e}"),
    );
    (c1, c2)
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut checked, mut violations) = (0, 0);
    while checked < 5000 {
        let z = rng.random_range(3..=8);
        let m = rng.random_range(1..=12);
        let d = rng.random_range(0.0..0.5);
        let zeta: Vec<Vec<f64>> = (0..m).map(|_| (0..z).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let delta: Vec<Vec<f64>> = (0..z).map(|n| (0..z).map(|l| if n == l { 0.0 } else { d }).collect()).collect();
        let mut eps = vec![vec![0.0; z]; z];
        for n in 0..z {
            for l in n + 1..z {
                let v = rng.random_range(0.0..1.0);
                eps[n][l] = v;
                eps[l][n] = v;
            }
        }
        let omega = rng.random_range(0.0..3.0);
        let ids = |k: usize| (0..k as u32).map(NodeId).collect::<Vec<_>>();
        let inst = AllocationInstance::new(ids(m), ids(z), zeta, delta, eps, omega).expect("instance");
        for _ in 0..100 {
            let i = rng.random_range(0..z);
            let b: Vec<bool> = (0..z).map(|n| n != i && rng.random_bool(0.5)).collect();
            let a: Vec<bool> = b.iter().map(|&v| v && rng.random_bool(0.5)).collect();
            let plus = |s: &[bool]| {
                let mut t = s.to_vec();
                t[i] = true;
                t
            };
            let gain_a = oracle_f(&inst, &plus(&a)) - oracle_f(&inst, &a);
            let gain_b = oracle_f(&inst, &plus(&b)) - oracle_f(&inst, &b);
            checked += 1;
            if gain_a > gain_b + 1e-9 {
                violations += 1;
            }
        }
    }
    verdict(violations == 0, format!("{checked} triples, {violations} violations"))
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut ratios = Vec::with_capacity(5000);
    for _ in 0..100 {
        let inst = random_small_world(&mut rng, 8);
        let fub = oracle_f_ub(&inst);
        let opt = subsets(inst.candidates().len()).map(|x| fub - oracle_f(&inst, &x)).fold(0.0, f64::max);
        for seed in 0..50 {
            let sol = double_greedy(&inst, seed).expect("double greedy");
            let got = fub - oracle_f(&inst, sol.deployment.as_slice());
            ratios.push(if opt > 0.0 { got / opt } else { 1.0 });
        }
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(mean >= 0.5, format!("{} runs, mean ratio {mean:.4}, min {min:.4}", ratios.len()))
}

// ---- simulation ----

fn criterion_5() -> Verdict {
    let t = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for control in [ControlMode::Off, ControlMode::Share] {
        let mut cfg = deadlock_scenario();
        cfg.control = control;
        let out = run(&cfg).expect("deadlock run");
        let (ab, ba) = (0, 1);
        assert_eq!(out.traced_pairs[ab], (NodeId(0), NodeId(1)));
        assert_eq!(out.traced_pairs[ba], (NodeId(1), NodeId(0)));
        let window = |from: f64, to: f64, i: usize| -> Tokens {
            out.trace.iter().filter(|tp| tp.time > from + 1e-9 && tp.time <= to + 1e-9).map(|tp| tp.pair_value[i]).sum()
        };
        match control {
            ControlMode::Off => {
                let stalled = window(60.0, cfg.duration, ab) + window(60.0, cfg.duration, ba) == 0.0;
                // C -> B is the forward direction of the second channel.
                let drained = out.trace.iter().find(|tp| tp.time <= 60.0 && tp.balances[2] <= 1e-9).map(|tp| tp.time);
                pass &= stalled && drained.is_some();
                lines.push(format!("off: A<->B idle after 60s {stalled}, C->B drained at {drained:?}"));
            }
            _ => {
                let (rab, rba) = (window(30.0, 120.0, ab) / 90.0, window(30.0, 120.0, ba) / 90.0);
                pass &= rab + rba >= 0.8 && (rab - rba).abs() <= 0.1;
                lines.push(format!("share: r_ab {rab:.3} r_ba {rba:.3} tok/s"));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(pass && secs < 5.0, format!("{}, {secs:.2}s", lines.join("; ")))
}

/// Grid search for the log-utility optimum of one flow each way over a
/// channel: capacity `(r1 + r2) delta <= c` and equal directional rates.
fn grid_optimum(c: f64, delta: f64) -> (f64, f64) {
    let step = 0.001;
    let n = (c / delta / step) as usize;
    let mut best = (f64::NEG_INFINITY, (0.0, 0.0));
    for i in 1..=n {
        for j in 1..=n {
            let (r1, r2) = (i as f64 * step, j as f64 * step);
            if (r1 + r2) * delta > c + 1e-12 || (r1 - r2).abs() > step / 2.0 {
                continue;
            }
            let u = r1.ln() + r2.ln();
            if u > best.0 {
                best = (u, (r1, r2));
            }
        }
    }
    best.1
}

fn criterion_6() -> Verdict {
    let t = Instant::now();
    let p = FluidParams::default();
    assert_eq!((p.capacity, p.delta), (10.0, 1.0));
    let target = grid_optimum(p.capacity, p.delta);
    let mut worst = 0.0f64;
    for start in [(0.5, 0.5), (0.5, 3.0), (8.0, 1.0)] {
        let tail = two_way_channel(&p, start, 20_000);
        let (r1, r2) = tail[tail.len() - 1];
        worst = worst.max(((r1 - target.0) / target.0).abs()).max(((r2 - target.1) / target.1).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst <= 0.05 && secs < 5.0,
        format!("oracle optimum ({:.3}, {:.3}), worst relative gap {worst:.2e}, {secs:.2}s", target.0, target.1),
    )
}

fn criterion_7() -> Verdict {
    let out = run(&SimConfig::default()).expect("default run");
    let c = &out.compliance;
    let (cap, bal) = (c.capacity_rate(), c.balance_rate());
    verdict(
        c.samples > 0 && cap < 0.01 && bal < 0.01,
        format!("{} samples, capacity {:.2}%, balance {:.2}%", c.samples, 100.0 * cap, 100.0 * bal),
    )
}

fn criterion_8() -> Verdict {
    let base = choice_base_config();
    let arms = [
        (PathKind::Edw, 5, SchedulePolicy::Lifo),
        (PathKind::Ksp, 5, SchedulePolicy::Lifo),
        (PathKind::Edw, 1, SchedulePolicy::Lifo),
        (PathKind::Edw, 5, SchedulePolicy::Fifo),
    ];
    let tsr: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = arms
            .iter()
            .map(|&(kind, k, policy)| {
                let mut cfg = base.clone();
                s.spawn(move || {
                    cfg.routing.path_kind = kind;
                    cfg.routing.k = k;
                    cfg.routing.policy = policy;
                    run(&cfg).expect("choice run").tsr
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("thread")).collect()
    });
    let legs = [("EDW>KSP", tsr[0] - tsr[1]), ("5>1 paths", tsr[0] - tsr[2]), ("LIFO>FIFO", tsr[0] - tsr[3])];
    let pass = legs.iter().all(|l| l.1 > 0.05);
    let text: Vec<String> = legs.iter().map(|(n, m)| format!("{n} {:+.1}pp", 100.0 * m)).collect();
    verdict(pass, format!("TSR at EDW/5/LIFO {:.3}; {}", tsr[0], text.join(", ")))
}

fn criterion_9() -> Verdict {
    let mut notes = Vec::new();
    let p = CcbtParams { epsilon: 7.5, sigma_contention: 0.3, varpi_coherence: 0.02 };
    let lin = CcbtParams { epsilon: 2.5, sigma_contention: 0.0, varpi_coherence: 0.0 };
    let mut exact = ccbt_throughput(1, &p).unwrap() == 7.5;
    exact &= (1..=10).all(|n| ccbt_throughput(n, &lin).unwrap() == 2.5 * n as f64);
    // 7.5 * 5 / (1 + 0.3 * 4 + 0.02 * 20) = 37.5 / 2.6
    exact &= (ccbt_throughput(5, &p).unwrap() - 37.5 / 2.6).abs() < 1e-12;
    notes.push(format!("hand values {}", if exact { "match" } else { "differ" }));

    let truth = CcbtParams { epsilon: 3.0, sigma_contention: 0.1, varpi_coherence: 0.02 };
    let data: Vec<(usize, f64)> = (1..=10).map(|n| (n, ccbt_throughput(n, &truth).unwrap())).collect();
    let fit = ccbt_fit(&data).expect("fit").params;
    let err = (fit.epsilon - truth.epsilon)
        .abs()
        .max((fit.sigma_contention - truth.sigma_contention).abs())
        .max((fit.varpi_coherence - truth.varpi_coherence).abs());
    notes.push(format!("synthetic fit error {err:.1e}"));

    let ns: Vec<usize> = (1..=10).collect();
    let pts = concurrent_channel_sweep(&ccbt_base_config(), &ns, 4).expect("sweep");
    let ntp: Vec<f64> = pts.iter().map(|p| p.ntp).collect();
    let peak = (0..ntp.len()).max_by(|&a, &b| ntp[a].total_cmp(&ntp[b])).unwrap();
    let unimodal = ntp[..=peak].windows(2).all(|w| w[1] >= w[0]) && ntp[peak..].windows(2).all(|w| w[1] <= w[0]);
    let sweep_fit = ccbt_fit(&pts.iter().map(|p| (p.n_cc, p.ntp)).collect::<Vec<_>>()).expect("sweep fit");
    let model = |n: f64| {
        let q = sweep_fit.params;
        q.epsilon * n / (1.0 + q.sigma_contention * (n - 1.0) + q.varpi_coherence * n * (n - 1.0))
    };
    let rms = (pts.iter().map(|p| (model(p.n_cc as f64) - p.ntp).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
    let range = ntp.iter().copied().fold(f64::MIN, f64::max) - ntp.iter().copied().fold(f64::MAX, f64::min);
    let rel = rms / range;
    notes.push(format!("sweep unimodal {unimodal} peak n_cc {}, residual {:.1}% of range", peak + 1, 100.0 * rel));
    verdict(exact && err <= 1e-6 && unimodal && rel < 0.1, notes.join(", "))
}

// ---- protocol ----

fn client_balance(o: &ProtocolOutcome, cfg: &ProtocolConfig, c: NodeId, final_state: bool) -> Tokens {
    let g = if final_state { &o.graph } else { &o.initial };
    let hub = cfg.hub_of(c).expect("client");
    let chan = g.channels_between(c, hub)[0];
    g.balance_from(chan, c)
}

/// Problems an outside observer can see: lost or created funds, leftover
/// locks, and clients whose balances disagree with the settled payments.
fn audit(o: &ProtocolOutcome, cfg: &ProtocolConfig) -> Vec<String> {
    let mut problems = Vec::new();
    if (o.graph.total_funds() - o.initial.total_funds()).abs() > 1e-9 {
        problems.push("total funds changed".to_string());
    }
    for ch in o.graph.channels() {
        if ch.htlcs(true) + ch.htlcs(false) > 0 || ch.locked(true) + ch.locked(false) > 1e-9 {
            problems.push("funds left locked".to_string());
        }
    }
    let mut net: BTreeMap<NodeId, Tokens> = BTreeMap::new();
    for p in &o.payments {
        match p.status {
            PaymentStatus::Completed => {
                *net.entry(p.request.sender).or_default() -= p.request.amount;
                *net.entry(p.request.recipient).or_default() += p.request.amount;
            }
            PaymentStatus::RolledBack | PaymentStatus::NotStarted => {}
        }
    }
    for c in cfg.client_ids() {
        let want = client_balance(o, cfg, c, false) + net.get(&c).copied().unwrap_or(0.0);
        let got = client_balance(o, cfg, c, true);
        if (want - got).abs() > 1e-9 {
            problems.push(format!("client {c} holds {got}, settled payments imply {want}"));
        }
    }
    problems
}

fn tampered(att: &Attestation) -> Vec<Attestation> {
    let mut out = Vec::new();
    let mut a = att.clone();
    a.idx ^= 1;
    out.push(a);
    let mut a = att.clone();
    a.eid.0[0] ^= 1;
    out.push(a);
    let mut a = att.clone();
    a.prog_hash.0[31] ^= 0x80;
    out.push(a);
    let mut a = att.clone();
    match a.outp.first_mut() {
        Some(b) => *b ^= 1,
        None => a.outp.push(0),
    }
    out.push(a);
    let mut a = att.clone();
    a.sigma.0[5] ^= 4;
    out.push(a);
    out
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let ias = Ias::default();
    let (mut violations, mut audits, mut honest_bad, mut tamper_ok) = (0, 0, 0, 0);
    let (mut attested, mut tampers) = (0, 0);
    let mut status_counts = [0usize; 3];
    for run_no in 0..1000u64 {
        let hubs = rng.random_range(2..=4);
        let cfg = ProtocolConfig {
            hubs,
            clients_per_hub: rng.random_range(1..=3),
            kmg_size: rng.random_range(1..=hubs),
            client_balance: rng.random_range(5.0..40.0),
            ..ProtocolConfig::default()
        };
        let honest = run_no % 4 == 0;
        let actions = if honest { 0 } else { rng.random_range(1..=5) };
        let (requests, adversary) = random_scenario(&cfg, run_no, rng.random_range(1..=8), actions);
        let o = run_protocol(&cfg, &requests, &adversary).expect("protocol run");
        violations += o.violations.len();
        audits += audit(&o, &cfg).len();
        for p in &o.payments {
            status_counts[match p.status {
                PaymentStatus::Completed => 0,
                PaymentStatus::RolledBack => 1,
                PaymentStatus::NotStarted => 2,
            }] += 1;
        }
        if honest {
            let mpk = o.gatt.mpk();
            for att in &o.attestations {
                attested += 1;
                if !o.gatt.verify(&mpk, att) {
                    honest_bad += 1;
                }
                for t in tampered(att) {
                    tampers += 1;
                    let proof = ias.prove(&o.gatt, &mpk, &t);
                    if o.gatt.verify(&mpk, &t) || proof.b {
                        tamper_ok += 1;
                    }
                }
            }
            for p in o.payments.iter().filter(|p| p.status == PaymentStatus::Completed) {
                match &p.proof {
                    Some(proof) if p.proof_valid && proof.b && ias.check(proof) => {}
                    _ => honest_bad += 1,
                }
            }
        }
    }
    verdict(
        violations == 0 && audits == 0 && honest_bad == 0 && tamper_ok == 0 && attested > 0,
        format!(
            "1000 runs ({} completed, {} rolled back, {} not started), {violations} invariant and {audits} audit \
             failures; {attested} honest attestations, {honest_bad} rejected; {tampers} tampered, {tamper_ok} accepted",
            status_counts[0], status_counts[1], status_counts[2]
        ),
    )
}

// ---- determinism ----

fn run_cli(args: &[&str], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_pcn"))
        .args(args)
        .args(["--seed", "7", "--out"])
        .arg(out)
        .output()
        .is_ok_and(|o| o.status.success())
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("read"))
        })
        .collect()
}

fn criterion_11() -> Verdict {
    let commands: [&[&str]; 6] =
        [&["allocate"], &["route-sim"], &["protocol-sim"], &["deadlock-demo"], &["ccbt"], &["sweep", "--approx"]];
    let (mut files, mut differ, mut failed) = (0, Vec::new(), Vec::new());
    for cmd in commands {
        let (a, b) = (tempfile::tempdir().expect("tmp"), tempfile::tempdir().expect("tmp"));
        if !(run_cli(cmd, a.path()) && run_cli(cmd, b.path())) {
            failed.push(cmd[0]);
            continue;
        }
        let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
        files += sa.len();
        if sa.is_empty() || sa != sb {
            differ.push(cmd[0]);
        }
    }
    verdict(
        differ.is_empty() && failed.is_empty(),
        format!("{files} output files over {} subcommands, differing {differ:?}, failed {failed:?}", commands.len()),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut report = |n: usize, v: Verdict| {
        let tag = match (v.pass, KNOWN_RED.contains(&n)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {n:>2} {tag}: {}", v.detail);
        results.push((n, v));
    };
    let (c1, c2) = criterion_1_2();
    report(1, c1);
    report(2, c2);
    report(3, criterion_3());
    report(4, criterion_4());
    report(5, criterion_5());
    report(6, criterion_6());
    report(7, criterion_7());
    report(8, criterion_8());
    report(9, criterion_9());
    report(10, criterion_10());
    report(11, criterion_11());

    let passed = results.iter().filter(|r| r.1.pass).count();
    let unexpected: Vec<usize> =
        results.iter().filter(|r| !r.1.pass && !KNOWN_RED.contains(&r.0)).map(|r| r.0).collect();
    println!("acceptance: {passed}/{} passed, unexpected failures {unexpected:?}", results.len());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
