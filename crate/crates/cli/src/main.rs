//! `pcn`: allocation solves, routing and protocol simulations, sweeps and
//! studies. Exit codes: 0 ok, 2 config error, 3 infeasible, 4 invariant
//! violation, 1 for I/O failures.

mod config;
mod export;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcn_core::allocation::{omega_sweep, small_world_instance, AllocError, AllocationInstance, HopCostRates};
use pcn_core::protocol::{random_scenario, run_protocol, PaymentStatus, ProtocolError};
use pcn_core::sim::{
    ccbt_base_config, ccbt_fit, ccbt_throughput, choice_base_config, concurrent_channel_sweep, deadlock_report,
    deadlock_scenario, is_unimodal, routing_choice_study, ControlMode, SimConfig, SimError,
};

use config::RunConfig;
use export::write_atomic;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Infeasible(String),
    Invariant(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::Invariant(m) => write!(f, "invariant violation: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<AllocError> for CliError {
    fn from(e: AllocError) -> Self {
        match e {
            AllocError::TooLarge { .. } => CliError::Config(format!("{e} (--approx)")),
            AllocError::Infeasible(_) | AllocError::NoCandidates | AllocError::EmptyDeployment => {
                CliError::Infeasible(e.to_string())
            }
            AllocError::WitnessViolation(_) => CliError::Invariant(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Topology(_) => CliError::Config(e.to_string()),
            _ => CliError::Invariant(e.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "pcn", version, about = "Payment channel hub allocation, routing and protocol simulator")]
struct Cli {
    /// Print more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// TOML run description; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Validate the configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ControlArg {
    Off,
    Share,
}

impl From<ControlArg> for ControlMode {
    fn from(c: ControlArg) -> Self {
        match c {
            ControlArg::Off => ControlMode::Off,
            ControlArg::Share => ControlMode::Share,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Choose hubs and client assignment for one omega.
    Allocate {
        #[command(flatten)]
        common: Common,
        /// Use double greedy instead of the exact solver.
        #[arg(long)]
        approx: bool,
        /// Record solver wall time (otherwise `NA`).
        #[arg(long)]
        timing: bool,
    },
    /// Simulate routing on the configured network and workload.
    RouteSim {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        control: Option<ControlArg>,
    },
    /// Run the payment protocol, optionally under an adversary.
    ProtocolSim {
        #[command(flatten)]
        common: Common,
    },
    /// Three-node liquidity deadlock with and without price control.
    DeadlockDemo {
        #[command(flatten)]
        common: Common,
        /// Run only this mode; both when absent.
        #[arg(long, value_enum)]
        control: Option<ControlArg>,
    },
    /// Sweep parallel hub channels and fit the concurrency model.
    Ccbt {
        #[command(flatten)]
        common: Common,
    },
    /// TSR over path kind, path count and queue policy.
    ChoiceStudy {
        #[command(flatten)]
        common: Common,
    },
    /// Omega sweep for allocation and price-interval sweep for routing.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        approx: bool,
        #[arg(long)]
        timing: bool,
    },
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    seed: Option<u64>,
    dry_run: bool,
    verbose: u8,
}

impl Ctx {
    fn new(common: &Common, verbose: u8) -> Result<Self, CliError> {
        let cfg = config::load(common.config.as_deref())?;
        let seed = common.seed.or(cfg.seed);
        Ok(Ctx { cfg, out: common.out.clone(), seed, dry_run: common.dry_run, verbose })
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        write_atomic(&path, contents)?;
        if self.verbose > 0 {
            println!("wrote {}", path.display());
        }
        Ok(())
    }

    fn sim_seeded(&self, mut cfg: SimConfig) -> SimConfig {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg
    }
}

fn allocation_instance(ctx: &Ctx) -> Result<(AllocationInstance, u64), CliError> {
    let a = &ctx.cfg.allocation;
    let seed = ctx.seed.unwrap_or(a.seed);
    let rates =
        HopCostRates { zeta_per_hop: a.zeta_per_hop, delta_per_hop: a.delta_per_hop, eps_per_hop: a.eps_per_hop };
    Ok((small_world_instance(a.nodes, a.candidates, a.clients, rates, a.omega, seed)?, seed))
}

fn solve_omegas(
    ctx: &Ctx,
    omegas: &[f64],
    approx: bool,
) -> Result<(AllocationInstance, Vec<pcn_core::allocation::FrontierPoint>), CliError> {
    let (inst, seed) = allocation_instance(ctx)?;
    let bound = ctx.cfg.allocation.exact_bound;
    if !approx && inst.num_candidates() > bound {
        return Err(AllocError::TooLarge { candidates: inst.num_candidates(), bound }.into());
    }
    let points = omega_sweep(&inst, omegas, if approx { 0 } else { bound }, seed)?;
    Ok((inst, points))
}

fn allocate(ctx: &Ctx, approx: bool, timing: bool) -> Result<(), CliError> {
    if ctx.dry_run {
        allocation_instance(ctx)?;
        println!("config ok");
        return Ok(());
    }
    let (inst, points) = solve_omegas(ctx, &[ctx.cfg.allocation.omega], approx)?;
    let p = &points[0];
    let hubs: Vec<String> = p.deployment.indices().iter().map(|&i| inst.candidates()[i].to_string()).collect();
    println!(
        "hubs [{}] C_M {:.6} C_S {:.6} C_B {:.6} ({})",
        hubs.join(" "),
        p.management,
        p.sync,
        p.balanced,
        p.solver.name()
    );
    ctx.write("allocation.csv", &export::allocation_csv(&points, inst.candidates(), timing))
}

fn route_sim(ctx: &Ctx, control: Option<ControlArg>) -> Result<(), CliError> {
    let mut cfg = ctx.sim_seeded(ctx.cfg.sim.clone().unwrap_or_default());
    if let Some(c) = control {
        cfg.control = c.into();
    }
    cfg.record_events = true;
    cfg.validate()?;
    if ctx.dry_run {
        println!("config ok");
        return Ok(());
    }
    let o = pcn_core::sim::run(&cfg)?;
    println!("tsr {:.4} ntp {:.4} steady_tsr {:.4} steady_ntp {:.4}", o.tsr, o.ntp, o.steady_tsr, o.steady_ntp);
    ctx.write("outcome.csv", &export::outcome_csv(&o))?;
    ctx.write("trace.csv", &export::trace_csv(&o, &o.final_graph))?;
    ctx.write("pairs.csv", &export::pair_trace_csv(&o))?;
    ctx.write("events.log", &export::events_log(&o))?;
    let rows: Vec<Vec<f64>> = o.trace.iter().map(|t| vec![t.time, t.completed_value]).collect();
    ctx.write("throughput.dat", &export::plot_data("delivered value per period", &["time", "value"], &rows))
}

fn protocol_sim(ctx: &Ctx) -> Result<(), CliError> {
    let spec = &ctx.cfg.protocol;
    spec.net.validate()?;
    let seed = ctx.seed.unwrap_or(spec.seed);
    let (requests, adversary) = if spec.requests.is_empty() {
        random_scenario(&spec.net, seed, spec.payments, spec.adversary_actions)
    } else {
        (spec.requests.clone(), Vec::new())
    };
    if ctx.dry_run {
        run_protocol(&spec.net, &[], &[])?;
        println!("config ok");
        return Ok(());
    }
    let o = run_protocol(&spec.net, &requests, &adversary)?;
    let count = |s: PaymentStatus| o.payments.iter().filter(|p| p.status == s).count();
    let summary = [
        ("payments", o.payments.len().to_string()),
        ("completed", count(PaymentStatus::Completed).to_string()),
        ("rolled_back", count(PaymentStatus::RolledBack).to_string()),
        ("not_started", count(PaymentStatus::NotStarted).to_string()),
        ("counter_increments", o.counter_increments.to_string()),
        ("violations", o.violations.len().to_string()),
    ];
    let mut csv = String::from("metric,value\n");
    for (k, v) in &summary {
        csv.push_str(&format!("{k},{v}\n"));
        print!("{k} {v} ");
    }
    println!();
    ctx.write("outcome.csv", &csv)?;
    ctx.write("protocol.csv", &export::protocol_csv(&o))?;
    ctx.write("events.log", &o.trace_text())?;
    if o.violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(o.violations.join("; ")))
    }
}

fn deadlock_demo(ctx: &Ctx, control: Option<ControlArg>) -> Result<(), CliError> {
    let modes = control.map_or(vec![ControlArg::Off, ControlArg::Share], |c| vec![c]);
    let mut base = ctx.sim_seeded(deadlock_scenario());
    if let Some(d) = ctx.cfg.deadlock.duration {
        base.duration = d;
    }
    base.validate()?;
    if ctx.dry_run {
        println!("config ok");
        return Ok(());
    }
    for mode in modes {
        let cfg = SimConfig { control: mode.into(), ..base.clone() };
        let name = cfg.control.name();
        let o = pcn_core::sim::run(&cfg)?;
        let r = deadlock_report(&o, (cfg.duration / 4.0).min(30.0), cfg.duration);
        println!(
            "{name}: A<->B {:.3} tok/s (ab {:.3}, ba {:.3}), collapse {}, C drained {}",
            r.throughput(),
            r.rate_ab,
            r.rate_ba,
            r.collapse_time.map_or("never".into(), |t| format!("{t:.1}s")),
            r.c_drained_at.map_or("never".into(), |t| format!("{t:.1}s")),
        );
        let tau = cfg.routing.tau;
        let ab = o.traced_pairs.iter().position(|p| (p.0 .0, p.1 .0) == (0, 1));
        let ba = o.traced_pairs.iter().position(|p| (p.0 .0, p.1 .0) == (1, 0));
        let rows: Vec<Vec<f64>> = o
            .trace
            .iter()
            .map(|t| {
                let v = |i: Option<usize>| i.map_or(0.0, |i| t.pair_value[i]);
                vec![t.time, (v(ab) + v(ba)) / tau]
            })
            .collect();
        ctx.write(
            &format!("deadlock_{name}.dat"),
            &export::plot_data("A<->B throughput", &["time", "tokens_per_s"], &rows),
        )?;
        ctx.write(&format!("deadlock_{name}_trace.csv"), &export::trace_csv(&o, &o.final_graph))?;
        ctx.write(&format!("deadlock_{name}_pairs.csv"), &export::pair_trace_csv(&o))?;
    }
    Ok(())
}

fn ccbt(ctx: &Ctx) -> Result<(), CliError> {
    let spec = &ctx.cfg.ccbt;
    let mut base = ctx.sim_seeded(ccbt_base_config());
    if let Some(d) = spec.duration {
        base.duration = d;
    }
    base.validate()?;
    if spec.n_cc.len() < 3 || spec.n_cc.contains(&0) || spec.replicates == 0 {
        return Err(CliError::Config("ccbt needs at least 3 positive n_cc values and 1 replicate".into()));
    }
    if ctx.dry_run {
        println!("config ok");
        return Ok(());
    }
    let points = concurrent_channel_sweep(&base, &spec.n_cc, spec.replicates)?;
    let measured: Vec<(usize, f64)> = points.iter().map(|p| (p.n_cc, p.ntp)).collect();
    let fit = ccbt_fit(&measured)?;
    let fitted: Vec<f64> = points.iter().map(|p| ccbt_throughput(p.n_cc, &fit.params)).collect::<Result<_, _>>()?;
    let ntps: Vec<f64> = points.iter().map(|p| p.ntp).collect();
    println!(
        "unimodal {} peak n_cc {} epsilon {:.6} sigma {:.6} varpi {:.6} relative residual {:.4}",
        is_unimodal(&ntps, 0.0),
        fit.params.peak(100),
        fit.params.epsilon,
        fit.params.sigma_contention,
        fit.params.varpi_coherence,
        fit.relative_residual
    );
    ctx.write("ccbt.csv", &export::sweep_csv(&points, &fitted))?;
    let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![p.n_cc as f64, p.ntp]).collect();
    ctx.write("ccbt_ntp.dat", &export::plot_data("n_cc sweep", &["n_cc", "ntp"], &rows))?;
    ctx.write(
        "ccbt_fit.csv",
        &format!(
            "epsilon,sigma_contention,varpi_coherence,residual_rms,relative_residual\n{},{},{},{},{}\n",
            fit.params.epsilon,
            fit.params.sigma_contention,
            fit.params.varpi_coherence,
            fit.residual_rms,
            fit.relative_residual
        ),
    )
}

fn choice_study(ctx: &Ctx) -> Result<(), CliError> {
    let mut base = ctx.sim_seeded(choice_base_config());
    if let Some(d) = ctx.cfg.choice.duration {
        base.duration = d;
    }
    base.validate()?;
    if ctx.dry_run {
        println!("config ok");
        return Ok(());
    }
    let rows = routing_choice_study(&base)?;
    if ctx.verbose > 0 {
        for r in &rows {
            println!("{:>9} {} {:>4} tsr {:.4}", r.kind.name(), r.paths, r.policy.name(), r.tsr);
        }
    }
    println!("{} configurations", rows.len());
    ctx.write("choice.csv", &export::choice_csv(&rows))
}

fn sweep(ctx: &Ctx, approx: bool, timing: bool) -> Result<(), CliError> {
    let spec = &ctx.cfg.sweep;
    let base = ctx.sim_seeded(ctx.cfg.sim.clone().unwrap_or_default());
    let configs: Vec<SimConfig> = spec
        .tau
        .iter()
        .map(|&tau| {
            let mut c = base.clone();
            c.routing.tau = tau;
            c.epoch = c.epoch.max(tau);
            c
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    allocation_instance(ctx)?;
    if ctx.dry_run {
        println!("config ok");
        return Ok(());
    }
    if !spec.omega.is_empty() {
        let (inst, points) = solve_omegas(ctx, &spec.omega, approx)?;
        ctx.write("sweep_allocation.csv", &export::allocation_csv(&points, inst.candidates(), timing))?;
        ctx.write("omega.dat", &export::omega_plot(&points))?;
    }
    let outcomes: Vec<Result<f64, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> =
            configs.iter().map(|c| s.spawn(move || pcn_core::sim::run(c).map(|o| o.steady_tsr))).collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut rows = Vec::with_capacity(outcomes.len());
    for (tau, tsr) in spec.tau.iter().zip(outcomes) {
        rows.push(vec![*tau, tsr?]);
    }
    ctx.write("tau.dat", &export::plot_data("price interval sweep", &["tau", "tsr"], &rows))?;
    println!("{} omega points, {} tau points", spec.omega.len(), rows.len());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let v = cli.verbose;
    let ctx = |c: &Common| Ctx::new(c, v);
    match cli.command {
        Command::Allocate { common, approx, timing } => allocate(&ctx(&common)?, approx, timing),
        Command::RouteSim { common, control } => route_sim(&ctx(&common)?, control),
        Command::ProtocolSim { common } => protocol_sim(&ctx(&common)?),
        Command::DeadlockDemo { common, control } => deadlock_demo(&ctx(&common)?, control),
        Command::Ccbt { common } => ccbt(&ctx(&common)?),
        Command::ChoiceStudy { common } => choice_study(&ctx(&common)?),
        Command::Sweep { common, approx, timing } => sweep(&ctx(&common)?, approx, timing),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pcn: {e}");
            ExitCode::from(e.code())
        }
    }
}
