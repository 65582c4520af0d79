use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use pcn_core::allocation::FrontierPoint;
use pcn_core::protocol::ProtocolOutcome;
use pcn_core::sim::{ChoiceRow, SimOutcome, SweepPoint};
use pcn_core::topology::{NodeId, PcnGraph};

/// Writes through a sibling temp file and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Whitespace-separated columns under a `#` header naming them in order.
pub fn plot_data(title: &str, columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = format!("# {title}\n# {}\n", columns.join(" "));
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

pub fn outcome_csv(o: &SimOutcome) -> String {
    let rows: [(&str, String); 18] = [
        ("generated", o.generated.to_string()),
        ("completed", o.completed.to_string()),
        ("generated_value", o.generated_value.to_string()),
        ("completed_value", o.completed_value.to_string()),
        ("tsr", o.tsr.to_string()),
        ("ntp", o.ntp.to_string()),
        ("steady_tsr", o.steady_tsr.to_string()),
        ("steady_ntp", o.steady_ntp.to_string()),
        ("latency_count", o.latency.count.to_string()),
        ("latency_mean", o.latency.mean.to_string()),
        ("latency_p50", o.latency.p50.to_string()),
        ("latency_p95", o.latency.p95.to_string()),
        ("compliance_samples", o.compliance.samples.to_string()),
        ("capacity_violations", o.compliance.capacity_violations.to_string()),
        ("balance_violations", o.compliance.balance_violations.to_string()),
        ("max_conservation_error", o.max_conservation_error.to_string()),
        ("deadlock", o.deadlock.to_string()),
        ("fees", o.fees.to_string()),
    ];
    let mut s = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

/// Per-period channel state, one row per channel direction. Channel columns
/// are only recorded on small graphs; larger runs give the header alone.
pub fn trace_csv(o: &SimOutcome, graph: &PcnGraph) -> String {
    let mut s = String::from("time,channel,from,to,lambda,mu,xi,balance,queued\n");
    for tp in &o.trace {
        if tp.prices.is_empty() {
            continue;
        }
        for (i, c) in graph.channels().iter().enumerate() {
            for (d, (from, to)) in [(c.a, c.b), (c.b, c.a)].into_iter().enumerate() {
                let slot = 2 * i + d;
                let _ = writeln!(
                    s,
                    "{},{i},{from},{to},{},{},{},{},{}",
                    tp.time, tp.lambda[i], tp.mu[slot], tp.prices[slot], tp.balances[slot], tp.queued[slot]
                );
            }
        }
    }
    s
}

/// Per-period rate, window and delivered value of each traced pair.
pub fn pair_trace_csv(o: &SimOutcome) -> String {
    let mut s = String::from("time,source,dest,rate,window,delivered\n");
    for tp in &o.trace {
        for (i, (a, b)) in o.traced_pairs.iter().enumerate() {
            let _ = writeln!(s, "{},{a},{b},{},{},{}", tp.time, tp.pair_rate[i], tp.pair_window[i], tp.pair_value[i]);
        }
    }
    s
}

pub fn events_log(o: &SimOutcome) -> String {
    o.events.iter().map(|e| format!("{e}\n")).collect()
}

/// `wall_time` is `NA` unless timing was requested, keeping reruns identical.
pub fn allocation_csv(points: &[FrontierPoint], candidates: &[NodeId], timing: bool) -> String {
    let mut s = String::from("omega,hub_count,hubs,management,sync,balanced,solver,wall_time\n");
    for p in points {
        let hubs: Vec<String> = p.deployment.indices().iter().map(|&i| candidates[i].to_string()).collect();
        let wall = if timing { p.wall_time.to_string() } else { "NA".into() };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{wall}",
            p.omega,
            p.hub_count,
            hubs.join(" "),
            p.management,
            p.sync,
            p.balanced,
            p.solver.name()
        );
    }
    s
}

pub fn omega_plot(points: &[FrontierPoint]) -> String {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![p.omega, p.hub_count as f64, p.management, p.sync]).collect();
    plot_data("omega sweep", &["omega", "hub_count", "C_M", "C_S"], &rows)
}

pub fn sweep_csv(points: &[SweepPoint], fitted: &[f64]) -> String {
    let mut s = String::from("n_cc,ntp,throughput,fitted_ntp\n");
    for (p, f) in points.iter().zip(fitted) {
        let _ = writeln!(s, "{},{},{},{f}", p.n_cc, p.ntp, p.throughput);
    }
    s
}

pub fn choice_csv(rows: &[ChoiceRow]) -> String {
    let mut s = String::from("path_kind,paths,policy,tsr,ntp\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.kind.name(), r.paths, r.policy.name(), r.tsr, r.ntp);
    }
    s
}

pub fn protocol_csv(o: &ProtocolOutcome) -> String {
    let mut s = String::from("tid,sender,recipient,amount,status,units,proof_valid\n");
    for p in &o.payments {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.tid,
            p.request.sender,
            p.request.recipient,
            p.request.amount,
            p.status.name(),
            p.units,
            p.proof_valid
        );
    }
    s
}
