//! Command-line interface: trace replay, trace statistics, solver
//! cross-verification, parameter sweeps, and synthetic trace generation.
//!
//! Exit codes: 0 success, 1 input error, 2 internal error, 3 verification
//! failure. Set GLEANER_LOG=quiet|info|debug to control progress chatter on
//! standard error.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::metrics::{self, DEFAULT_WINDOW_S};
use crate::milp::SolveConfig;
use crate::model::{ObjectiveMetric, TrainerSpec};
use crate::output::{self, SweepRow};
use crate::policies::{PolicyConfig, PolicyKind};
use crate::simulator::{self, SimulationConfig, SimulationReport, SolverKind};
use crate::trace::{self, EventLog, SynthConfig};
use crate::verify::{run_verification, InstanceConfig};

const EXIT_OK: i32 = 0;
const EXIT_INPUT: i32 = 1;
const EXIT_INTERNAL: i32 = 2;
const EXIT_VERIFY: i32 = 3;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd)]
enum Verbosity {
    Quiet,
    Info,
    Debug,
}

fn verbosity() -> Verbosity {
    match std::env::var("GLEANER_LOG").as_deref() {
        Ok("quiet") => Verbosity::Quiet,
        Ok("debug") => Verbosity::Debug,
        _ => Verbosity::Info,
    }
}

fn info(msg: impl AsRef<str>) {
    if verbosity() >= Verbosity::Info {
        eprintln!("{}", msg.as_ref());
    }
}

#[derive(Parser)]
#[command(
    name = "gleaner",
    about = "Allocate idle compute to elastic jobs and replay availability traces",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a node-availability trace over a set of trainers.
    Run(RunArgs),
    /// Summarize a trace: change rates, equivalent nodes, fragment CDF.
    TraceStats(TraceStatsArgs),
    /// Cross-check the allocation solvers on random instances.
    Verify(VerifyArgs),
    /// Re-run one simulation per value of a swept parameter.
    Sweep(SweepArgs),
    /// Generate a synthetic availability trace.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Milp,
    EqualShare,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Bb,
    CountDp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectiveArg {
    Throughput,
    ScalingEfficiency,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Availability trace, JSON Lines with {t, join, leave}.
    #[arg(long)]
    trace: PathBuf,
    /// Trainer specifications, a JSON array.
    #[arg(long)]
    trainers: PathBuf,
    #[arg(long, value_enum, default_value = "milp")]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value = "count-dp")]
    solver: SolverArg,
    /// Forward-looking time in seconds.
    #[arg(long, default_value_t = 60.0)]
    tfwd: f64,
    /// Cap on concurrently running trainers (unlimited when omitted).
    #[arg(long)]
    pjmax: Option<u32>,
    #[arg(long, value_enum, default_value = "throughput")]
    objective: ObjectiveArg,
    /// Solver budget per event; 0 keeps the current map at every event.
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Accepted for interface stability; replay itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulation end time; defaults to the trace horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Add measured solver wall time to each rescale pause.
    #[arg(long, default_value_t = false)]
    charge_solver_time: bool,
    /// Window width for the efficiency series, in seconds.
    #[arg(long, default_value_t = DEFAULT_WINDOW_S)]
    window: f64,
    /// Report directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TraceStatsArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Drop fragments shorter than this from the length distribution.
    #[arg(long, default_value_t = 0.0)]
    min_fragment: f64,
    /// Treat the log as spanning up to this time; defaults to the last event.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    max_jobs: u32,
    #[arg(long, default_value_t = 12)]
    max_nodes: u32,
    /// Cap each job's n_max - n_min, keeping brute force tractable.
    #[arg(long)]
    max_span: Option<u32>,
    /// Check only the dynamic program against brute force.
    #[arg(long, default_value_t = false)]
    no_bb: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    base: RunArgs,
    /// Swept parameter: tfwd=10,60,120 | pjmax=5..35 | pjmax=5..35:5
    #[arg(long)]
    param: String,
}

#[derive(Args)]
struct SynthArgs {
    /// Pool size the trace draws nodes from.
    #[arg(long, default_value_t = 64)]
    nodes: u32,
    /// Mean node joins per hour.
    #[arg(long, default_value_t = 80.0)]
    join_rate: f64,
    /// Mean idle residency per node, in seconds.
    #[arg(long, default_value_t = 1800.0)]
    residency: f64,
    /// Trace length in seconds.
    #[arg(long, default_value_t = 4500.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output trace path (JSON Lines).
    #[arg(long)]
    out: PathBuf,
}

/// Anything that should stop the program, tagged with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes, not input errors.
            let code = if err.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = err.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::TraceStats(args) => cmd_trace_stats(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Synth(args) => cmd_synth(&args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_trace(path: &Path) -> Result<EventLog, Failure> {
    let file = File::open(path)
        .map_err(|e| Failure::input(format!("cannot open trace {}: {e}", path.display())))?;
    EventLog::parse(BufReader::new(file))
        .map_err(|e| Failure::input(format!("bad trace {}: {e}", path.display())))
}

fn load_trainers(path: &Path) -> Result<Vec<TrainerSpec>, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot open trainers {}: {e}", path.display())))?;
    let trainers: Vec<TrainerSpec> = serde_json::from_str(&text)
        .map_err(|e| Failure::input(format!("bad trainers {}: {e}", path.display())))?;
    if trainers.is_empty() {
        return Err(Failure::input(format!("{}: no trainers", path.display())));
    }
    Ok(trainers)
}

fn sim_config(args: &RunArgs) -> Result<SimulationConfig, Failure> {
    if !(args.tfwd > 0.0) || !args.tfwd.is_finite() {
        return Err(Failure::input("--tfwd must be positive"));
    }
    if args.pjmax == Some(0) {
        return Err(Failure::input("--pjmax must be at least 1"));
    }
    if let Some(h) = args.horizon {
        if !(h > 0.0) {
            return Err(Failure::input("--horizon must be positive"));
        }
    }
    if !(args.window > 0.0) {
        return Err(Failure::input("--window must be positive"));
    }
    Ok(SimulationConfig {
        policy_cfg: PolicyConfig {
            policy: match args.policy {
                PolicyArg::Milp => PolicyKind::Milp,
                PolicyArg::EqualShare => PolicyKind::EqualShare,
            },
            solve: SolveConfig {
                t_fwd_s: args.tfwd,
                metric: match args.objective {
                    ObjectiveArg::Throughput => ObjectiveMetric::Throughput,
                    ObjectiveArg::ScalingEfficiency => ObjectiveMetric::ScalingEfficiency,
                },
                timeout_ms: args.timeout_ms.unwrap_or(u64::MAX),
                ..SolveConfig::default()
            },
            pj_max: args.pjmax.unwrap_or(u32::MAX),
        },
        solver: match args.solver {
            SolverArg::Bb => SolverKind::Bb,
            SolverArg::CountDp => SolverKind::CountDp,
        },
        charge_solver_time: args.charge_solver_time,
        horizon_s: args.horizon,
    })
}

fn simulate(
    args: &RunArgs,
) -> Result<(EventLog, Vec<TrainerSpec>, SimulationReport), Failure> {
    let log = load_trace(&args.trace)?;
    let trainers = load_trainers(&args.trainers)?;
    let cfg = sim_config(args)?;
    let report = simulator::run(&log, &trainers, &cfg)
        .map_err(|e| Failure::internal(format!("simulation failed: {e}")))?;
    Ok((log, trainers, report))
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let (log, trainers, report) = simulate(args)?;
    let eff = metrics::efficiency_report(&log, &report, &trainers, args.window)
        .map_err(|e| Failure::internal(format!("efficiency report failed: {e}")))?;
    let t0 = log.events.first().map_or(0.0, |e| e.t_s);
    output::write_run_reports(&args.out, &report, &eff, t0, args.window)
        .map_err(|e| Failure::internal(format!("cannot write reports: {e}")))?;
    info(format!(
        "replayed {} events over {} trainers: A_e = {:.1} samples, U = {:.2}%",
        report.events.len(),
        trainers.len(),
        report.a_e_samples,
        eff.u_pct
    ));
    info(format!("reports written to {}", args.out.display()));
    Ok(())
}

fn cmd_trace_stats(args: &TraceStatsArgs) -> Result<(), Failure> {
    if !(args.min_fragment >= 0.0) {
        return Err(Failure::input("--min-fragment must be non-negative"));
    }
    let mut log = load_trace(&args.trace)?;
    if let Some(h) = args.horizon {
        log.set_horizon(h)
            .map_err(|e| Failure::input(format!("bad --horizon: {e}")))?;
    }
    let stats = trace::stats(&log, args.min_fragment)
        .map_err(|e| Failure::input(format!("bad trace {}: {e}", args.trace.display())))?;
    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::internal(format!("cannot create {}: {e}", args.out.display())))?;
    let write = |name: &str, text: String| {
        fs::write(args.out.join(name), text)
            .map_err(|e| Failure::internal(format!("cannot write {name}: {e}")))
    };
    write("stats.csv", output::stats_csv(&stats))?;
    write("cdf.csv", output::cdf_csv(&stats))?;
    info(format!(
        "INC/h = {}, DEC/h = {}, eq-nodes = {:.3}, idle node-hours = {:.3}",
        stats.inc_per_h, stats.dec_per_h, stats.eq_nodes, stats.idle_node_hours
    ));
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    if args.max_jobs == 0 || args.max_nodes == 0 {
        return Err(Failure::input("--max-jobs and --max-nodes must be at least 1"));
    }
    let shape = InstanceConfig {
        max_jobs: args.max_jobs,
        max_nodes: args.max_nodes,
        max_span: args.max_span,
    };
    let outcome = run_verification(args.instances, args.seed, &shape, !args.no_bb);
    report_verification(&outcome)
}

fn report_verification(outcome: &crate::verify::VerifyOutcome) -> Result<(), Failure> {
    if outcome.ok() {
        info(format!("{} instances verified, no disagreements", outcome.instances));
        Ok(())
    } else {
        let first = &outcome.failures[0];
        let reproducer =
            serde_json::to_string_pretty(first).expect("failure is serializable");
        eprintln!("reproducer for seed {}:\n{reproducer}", first.seed);
        Err(Failure {
            code: EXIT_VERIFY,
            message: format!(
                "{} of {} instances failed; first: {}",
                outcome.failures.len(),
                outcome.instances,
                first.detail
            ),
        })
    }
}

enum SweptParameter {
    Tfwd(Vec<f64>),
    Pjmax(Vec<u32>),
}

/// Parses `name=v1,v2,...`, `name=a..b`, or `name=a..b:step`.
fn parse_param(spec: &str) -> Result<SweptParameter, Failure> {
    let bad = |why: &str| Failure::input(format!("bad --param {spec:?}: {why}"));
    let (name, rest) = spec
        .split_once('=')
        .ok_or_else(|| bad("expected name=values"))?;
    let values: Vec<f64> = if let Some((a, tail)) = rest.split_once("..") {
        let (b, step) = match tail.split_once(':') {
            Some((b, s)) => (b, Some(s)),
            None => (tail, None),
        };
        let lo: f64 = a.trim().parse().map_err(|_| bad("range start is not a number"))?;
        let hi: f64 = b.trim().parse().map_err(|_| bad("range end is not a number"))?;
        let step: f64 = match step {
            Some(s) => s.trim().parse().map_err(|_| bad("step is not a number"))?,
            None => 1.0,
        };
        if !(step > 0.0) {
            return Err(bad("step must be positive"));
        }
        if hi < lo {
            return Err(bad("range end is below its start"));
        }
        let mut vs = Vec::new();
        let mut v = lo;
        while v <= hi + 1e-9 {
            vs.push(v);
            v += step;
        }
        vs
    } else {
        rest.split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("values must be numbers"))?
    };
    if values.is_empty() {
        return Err(bad("no values"));
    }
    let mut seen = Vec::new();
    let mut deduped = Vec::new();
    for v in values {
        if seen.contains(&v.to_bits()) {
            info(format!("warning: duplicate value {v} in --param, using it once"));
        } else {
            seen.push(v.to_bits());
            deduped.push(v);
        }
    }
    match name {
        "tfwd" => {
            if deduped.iter().any(|v| !(*v > 0.0)) {
                return Err(bad("tfwd values must be positive"));
            }
            Ok(SweptParameter::Tfwd(deduped))
        }
        "pjmax" => {
            let ints = deduped
                .iter()
                .map(|&v| {
                    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                        Ok(v as u32)
                    } else {
                        Err(bad("pjmax values must be positive integers"))
                    }
                })
                .collect::<Result<Vec<u32>, Failure>>()?;
            Ok(SweptParameter::Pjmax(ints))
        }
        other => Err(bad(&format!("unknown parameter {other:?} (expected tfwd or pjmax)"))),
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let param = parse_param(&args.param)?;
    let members: Vec<(String, f64, RunArgs)> = match &param {
        SweptParameter::Tfwd(values) => values
            .iter()
            .map(|&v| {
                let mut a = args.base.clone();
                a.tfwd = v;
                ("tfwd".to_string(), v, a)
            })
            .collect(),
        SweptParameter::Pjmax(values) => values
            .iter()
            .map(|&v| {
                let mut a = args.base.clone();
                a.pjmax = Some(v);
                ("pjmax".to_string(), v as f64, a)
            })
            .collect(),
    };
    let mut rows = Vec::new();
    for (name, value, member) in &members {
        let (log, trainers, report) = simulate(member)?;
        let eff = metrics::efficiency_report(&log, &report, &trainers, member.window)
            .map_err(|e| Failure::internal(format!("efficiency report failed: {e}")))?;
        rows.push(SweepRow {
            parameter: name.clone(),
            value: *value,
            u_pct: eff.u_pct,
            rescale_cost_per_event: output::rescale_cost_per_event(&report),
            avg_runtime_s: output::mean_runtime_s(&report),
            resource_node_hours: eff.resource_node_hours,
        });
        info(format!("{name} = {value}: U = {:.2}%", eff.u_pct));
    }
    fs::create_dir_all(&args.base.out).map_err(|e| {
        Failure::internal(format!("cannot create {}: {e}", args.base.out.display()))
    })?;
    let path = args.base.out.join("sweep.csv");
    fs::write(&path, output::sweep_csv(&rows))
        .map_err(|e| Failure::internal(format!("cannot write {}: {e}", path.display())))?;
    info(format!("{} rows written to {}", rows.len(), path.display()));
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    let cfg = SynthConfig {
        n_pool: args.nodes,
        join_rate_per_h: args.join_rate,
        mean_residency_s: args.residency,
        duration_s: args.duration,
    };
    let log = trace::synth(&cfg, args.seed)
        .map_err(|e| Failure::input(format!("bad generator config: {e}")))?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| {
                Failure::internal(format!("cannot create {}: {e}", dir.display()))
            })?;
        }
    }
    let file = File::create(&args.out)
        .map_err(|e| Failure::internal(format!("cannot create {}: {e}", args.out.display())))?;
    log.write_jsonl(file)
        .map_err(|e| Failure::internal(format!("cannot write trace: {e}")))?;
    info(format!(
        "{} events over {} s written to {}",
        log.events.len(),
        log.t_end_s,
        args.out.display()
    ));
    Ok(())
}
