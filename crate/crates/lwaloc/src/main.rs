//! Command-line front end: simulate captures, locate targets from trace
//! files, and run batch experiments, ablations and parameter sweeps.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use lwaloc::config;
use lwaloc::experiment::{
    export_string, load_experiment, run_ablation, run_experiment, summarize_groups,
    ExportFormat, GroupedSummary, DEFAULT_FRAMES,
};
use lwaloc::geometry::cone_from_frequency;
use lwaloc::pipeline::{select_best_link, DutyDetection};
use lwaloc::trace::{read_trace_from_path, write_trace_to_path};
use lwaloc::{estimate_frequencies, localize, simulate_trace, Mode, PipelineParams};

#[derive(Parser)]
#[command(
    name = "lwaloc",
    version,
    about = "Dual-antenna dispersion localization: simulator, pipeline and experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a duty-cycled capture and write it as a trace file.
    Simulate(SimulateArgs),
    /// Estimate the target position from one or more trace files.
    Locate(LocateArgs),
    /// Run the experiment described by a config file.
    Run(BatchArgs),
    /// Run the experiment under every pipeline mode, sharing traces.
    Ablate(BatchArgs),
    /// Run the experiment over its configured parameter sweep.
    Sweep(BatchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Noise and frame seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of frames to capture.
    #[arg(long, default_value_t = DEFAULT_FRAMES)]
    frames: usize,
    /// Trace file to write.
    #[arg(long)]
    out: PathBuf,
    /// Strip on/off labels so downstream processing must detect them.
    #[arg(long)]
    unlabeled: bool,
}

#[derive(Args)]
struct LocateArgs {
    /// Scene description (TOML); provides antenna poses and the solve plane.
    #[arg(long)]
    config: PathBuf,
    /// Trace file; repeat the flag to choose the best of several links.
    #[arg(long, required = true)]
    trace: Vec<PathBuf>,
    /// Pipeline mode (s1, s2, s3 or s4).
    #[arg(long, default_value = "s4")]
    mode: Mode,
    /// On/off grouping source (use-labels or detect).
    #[arg(long, default_value = "use-labels")]
    duty_detection: DutyDetection,
}

#[derive(Args)]
struct BatchArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the pipeline mode (s1, s2, s3 or s4).
    #[arg(long)]
    mode: Option<Mode>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Output file; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output layout: results-csv, metrics-csv or cdf-csv.
    #[arg(long, default_value = "results-csv")]
    format: ExportFormat,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Locate(args) => locate(args),
        Command::Run(args) => batch(args, BatchKind::Run),
        Command::Ablate(args) => batch(args, BatchKind::Ablate),
        Command::Sweep(args) => batch(args, BatchKind::Sweep),
    }
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let scenario = config::load_scenario(&args.config)
        .with_context(|| format!("loading scene {}", args.config.display()))?;
    let mut trace = simulate_trace(&scenario, args.seed, args.frames)?;
    if args.unlabeled {
        trace = trace.without_labels();
    }
    write_trace_to_path(&trace, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} frames x {} subcarriers (seed {}) to {}",
        trace.frames.len(),
        trace.grid.count(),
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn locate(args: LocateArgs) -> anyhow::Result<()> {
    let scenario = config::load_scenario(&args.config)
        .with_context(|| format!("loading scene {}", args.config.display()))?;
    let traces = args
        .trace
        .iter()
        .map(|p| read_trace_from_path(p).with_context(|| format!("reading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let expected_digest = scenario.digest_hex();
    for (path, trace) in args.trace.iter().zip(&traces) {
        if trace.fingerprint.config_digest != expected_digest {
            eprintln!(
                "note: {} was captured under a different scene configuration",
                path.display()
            );
        }
    }

    let params = PipelineParams {
        mode: args.mode,
        duty_detection: args.duty_detection,
        ..PipelineParams::default()
    };
    let chosen = if traces.len() > 1 { select_best_link(&traces, &params)? } else { 0 };
    if traces.len() > 1 {
        println!("link: {} (best of {})", args.trace[chosen].display(), traces.len());
    }

    let estimate = estimate_frequencies(&traces[chosen], &params)?;
    let feed_r = scenario.lwa_r.pose.feed();
    let feed_l = scenario.lwa_l.pose.feed();
    let theta_r = feed_r.angle_of_frequency(estimate.f_r_hat)?;
    let theta_l = feed_l.angle_of_frequency(estimate.f_l_hat)?;
    println!("right antenna: f_hat = {:.3} MHz, angle = {theta_r:.2} deg", estimate.f_r_hat / 1e6);
    println!("left antenna:  f_hat = {:.3} MHz, angle = {theta_l:.2} deg", estimate.f_l_hat / 1e6);

    let cone_r = cone_from_frequency(&scenario.lwa_r.pose, estimate.f_r_hat)?;
    let cone_l = cone_from_frequency(&scenario.lwa_l.pose, estimate.f_l_hat)?;
    let location = localize(&cone_r, &cone_l, scenario.target.z, &scenario.room)?;
    println!(
        "position: x = {:.3} m, y = {:.3} m (solved in the z = {:.3} m plane)",
        location.x_m, location.y_m, location.z_m
    );
    let planar = ((location.x_m - scenario.target.x).powi(2)
        + (location.y_m - scenario.target.y).powi(2))
    .sqrt();
    println!("planar error vs configured target: {planar:.4} m");
    Ok(())
}

enum BatchKind {
    Run,
    Ablate,
    Sweep,
}

fn batch(args: BatchArgs, kind: BatchKind) -> anyhow::Result<()> {
    let mut spec = load_experiment(&args.config)
        .with_context(|| format!("loading experiment {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(trials) = args.trials {
        spec.trials = trials;
    }
    if let Some(mode) = args.mode {
        spec.pipeline.mode = mode;
    }
    if let Some(workers) = args.workers {
        spec.workers = Some(workers);
    }
    if matches!(kind, BatchKind::Sweep) && spec.sweep.is_none() {
        bail!("sweep: {} has no [sweep] block", args.config.display());
    }

    let rows = match kind {
        BatchKind::Ablate => run_ablation(&spec)?,
        BatchKind::Run | BatchKind::Sweep => run_experiment(&spec)?,
    };
    let text = export_string(&rows, args.format)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
            for group in summarize_groups(&rows)? {
                println!("{}", describe_group(&group));
            }
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn describe_group(group: &GroupedSummary) -> String {
    let s = &group.summary;
    let label = match group.sweep_value {
        Some(v) => format!("{} @ {v}", group.mode),
        None => group.mode.to_string(),
    };
    let median = match s.median_error_m {
        Some(m) => format!("{m:.3} m"),
        None => "n/a".to_string(),
    };
    let p95 = match s.p95_error_m {
        Some(p) => format!("{p:.3} m"),
        None => "n/a".to_string(),
    };
    format!(
        "[{label}] trials = {}, failures = {} ({:.1}%), median error = {median}, p95 = {p95}",
        s.rows,
        s.failures,
        100.0 * s.failure_rate
    )
}
