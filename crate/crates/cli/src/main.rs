//! `sl0lab`: run single reconstructions, phase-transition sweeps and timing
//! experiments, and plot their results.
//!
//! Exit codes: 0 on success, 1 when `solve` misses the recovery criterion,
//! 2 on any error.

mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use sl0lab::ensembles::{make_instance, write_instance, Suite};
use sl0lab::formats;
use sl0lab::phase::{run_phase_grid, uniform_grid, PhaseGridSpec, SUCCESS_THRESHOLD};
use sl0lab::plot::{time_vs_delta_plot, time_vs_n_plot, transition_plot};
use sl0lab::solvers::{AlgorithmRegistry, SolveContext};
use sl0lab::timing::{run_timing, TimingReport, TimingSpec};

use config::{resolve_seed, FileConfig, OneOrMany};

#[derive(Parser)]
#[command(name = "sl0lab", version, about = "Smoothed-l0 sparse recovery experiments")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for phase sweeps (0 = all cores).
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct one seeded instance and report the outcome as JSON.
    Solve(SolveArgs),
    /// Sweep a (delta, rho) grid and estimate the transition curve.
    Phase(PhaseArgs),
    /// Time an algorithm on grid points below its transition.
    Timing(TimingArgs),
    /// Render SVG figures from result CSVs.
    Plot(PlotArgs),
}

#[derive(Args)]
struct Common {
    /// Algorithm name (sl0-std, sl0-min, sl0-mss, sl0-mss1, sl0-mss2, iht).
    #[arg(long)]
    algo: Option<String>,
    /// Nonzero distribution: rademacher or gaussian.
    #[arg(long)]
    suite: Option<String>,
    /// Base seed; defaults to $SL0LAB_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long = "N")]
    signal_length: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[command(flatten)]
    common: Common,
    /// Also write the generated instance to this file.
    #[arg(long)]
    save_instance: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct PhaseArgs {
    #[arg(long = "N")]
    signal_length: Option<usize>,
    /// Comma-separated delta values.
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    /// Comma-separated rho values.
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    /// Uniform delta grid {1/K, 2/K, ..., 1}.
    #[arg(long)]
    delta_count: Option<usize>,
    /// Uniform rho grid {1/K, 2/K, ..., 1}.
    #[arg(long)]
    rho_count: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Evaluate every cell instead of stopping a column after three
    /// consecutive all-failure cells.
    #[arg(long)]
    no_cutoff: bool,
}

#[derive(Args)]
struct TimingArgs {
    #[arg(long = "N", value_delimiter = ',')]
    signal_length: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    /// Required distance below the transition on the rho axis.
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Transition CSV of the same algorithm, from `phase`.
    #[arg(long)]
    transition: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Use N in {800, ..., 12800} instead of {200, 400, 800}.
    #[arg(long)]
    full_n: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlotKind {
    /// rho* against delta from transition CSVs.
    Transition,
    /// Mean time against delta at one N, from timing CSVs.
    TimeDelta,
    /// Mean time against N at one delta (log-log), from timing CSVs.
    TimeN,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, value_enum, default_value = "transition")]
    kind: PlotKind,
    /// Input CSV, one per curve.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Legend label per input; defaults to the file stem.
    #[arg(long)]
    label: Vec<String>,
    /// Dashed `delta,rho` reference curve (transition plots only).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// N for time-delta plots; defaults to the largest N in each file.
    #[arg(long = "N")]
    signal_length: Option<usize>,
    /// delta for time-n plots.
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_suite(s: Option<&str>) -> Result<Suite> {
    s.unwrap_or("rademacher")
        .parse::<Suite>()
        .map_err(|e| anyhow!("{e}"))
}

fn parse_format(flag: Option<Format>, cfg: &FileConfig) -> Result<Format> {
    if let Some(f) = flag {
        return Ok(f);
    }
    match cfg.format.as_deref() {
        None => Ok(Format::Csv),
        Some(s) => Format::from_str(s, true).map_err(|e| anyhow!("format `{s}`: {e}")),
    }
}

fn pick<T: Clone>(flag: Vec<T>, cfg: &Option<OneOrMany<T>>) -> Option<Vec<T>> {
    if !flag.is_empty() {
        Some(flag)
    } else {
        cfg.clone().map(OneOrMany::into_vec)
    }
}

fn one<T: Clone>(cfg: &Option<OneOrMany<T>>, key: &str) -> Result<Option<T>> {
    match cfg.clone().map(OneOrMany::into_vec) {
        None => Ok(None),
        Some(v) if v.len() == 1 => Ok(Some(v[0].clone())),
        Some(_) => bail!("config key `{key}` must be a single value for this command"),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn cmd_solve(args: SolveArgs, cfg: &FileConfig) -> Result<bool> {
    let big_n = args
        .signal_length
        .or(one(&cfg.signal_length, "N")?)
        .unwrap_or(800);
    let delta = args
        .delta
        .or(one(&cfg.delta, "delta")?)
        .ok_or_else(|| anyhow!("--delta is required"))?;
    let rho = args
        .rho
        .or(one(&cfg.rho, "rho")?)
        .ok_or_else(|| anyhow!("--rho is required"))?;
    let suite = parse_suite(args.common.suite.as_deref().or(cfg.suite.as_deref()))?;
    let seed = resolve_seed(args.common.seed, cfg)?;
    let name = args
        .common
        .algo
        .or_else(|| cfg.algo.clone())
        .unwrap_or_else(|| "sl0-mss".into());
    let algo = AlgorithmRegistry::builtin().get(&name)?;

    let inst = make_instance(big_n, delta, rho, suite, seed)?;
    if let Some(path) = &args.save_instance {
        let mut w = create(path)?;
        write_instance(&inst, &mut w)?;
        w.flush()?;
    }
    let ctx = SolveContext::for_problem(&inst.a, inst.k);
    let res = algo.reconstruct(&inst.a, &inst.y, &ctx)?;
    let rel_err = (&res.x_hat - &inst.x).norm_squared() / inst.x.norm_squared();
    let success = rel_err < SUCCESS_THRESHOLD;

    let report = json!({
        "algorithm": name,
        "suite": suite.to_string(),
        "N": big_n,
        "n": inst.n(),
        "k": inst.k,
        "delta": delta,
        "rho": rho,
        "seed": seed,
        "success": success,
        "relative_error": rel_err,
        "outer_iterations": res.outer_iterations,
        "inner_iterations": res.inner_iterations_total,
        "residual_feasibility": res.residual_feasibility,
        "time_s": res.elapsed.as_secs_f64(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(success)
}

#[derive(Serialize)]
struct CellJson {
    delta: f64,
    rho: f64,
    trials: usize,
    successes: usize,
}

fn cmd_phase(args: PhaseArgs, cfg: &FileConfig) -> Result<()> {
    let name = args
        .common
        .algo
        .or_else(|| cfg.algo.clone())
        .unwrap_or_else(|| "sl0-mss".into());
    let algo = AlgorithmRegistry::builtin().get(&name)?;
    let suite = parse_suite(args.common.suite.as_deref().or(cfg.suite.as_deref()))?;
    let seed = resolve_seed(args.common.seed, cfg)?;

    let mut spec = PhaseGridSpec::full(&name, suite, seed);
    if let Some(n) = args.signal_length.or(one(&cfg.signal_length, "N")?) {
        spec.signal_length = n;
    }
    if let Some(d) = pick(args.delta, &cfg.delta) {
        spec.delta_values = d;
    } else if let Some(c) = args.delta_count.or(cfg.delta_count) {
        spec.delta_values = uniform_grid(c);
    }
    if let Some(r) = pick(args.rho, &cfg.rho) {
        spec.rho_values = r;
    } else if let Some(c) = args.rho_count.or(cfg.rho_count) {
        spec.rho_values = uniform_grid(c);
    }
    if let Some(t) = args.trials.or(cfg.trials) {
        spec.trials = t;
    }
    if args.no_cutoff || cfg.no_cutoff == Some(true) {
        spec.early_cutoff = None;
    }
    let format = parse_format(args.format, cfg)?;
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    let report = run_phase_grid(&spec, algo.as_ref())?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let (cells_path, transition_path) = match format {
        Format::Csv => {
            let cells_path = out.join("cells.csv");
            let transition_path = out.join("transition.csv");
            let mut w = create(&cells_path)?;
            formats::write_cells_csv(&mut w, &report.cells)?;
            w.flush()?;
            let mut w = create(&transition_path)?;
            formats::write_transition_csv(&mut w, &report.curve)?;
            w.flush()?;
            (cells_path, transition_path)
        }
        Format::Json => {
            let cells_path = out.join("cells.json");
            let transition_path = out.join("transition.json");
            let cells: Vec<CellJson> = report
                .cells
                .iter()
                .map(|c| CellJson {
                    delta: c.delta,
                    rho: c.rho,
                    trials: c.trials,
                    successes: c.successes,
                })
                .collect();
            let mut w = create(&cells_path)?;
            serde_json::to_writer_pretty(&mut w, &json!({"schema": "sl0lab-schema v1", "cells": cells}))?;
            writeln!(w)?;
            w.flush()?;
            let mut w = create(&transition_path)?;
            serde_json::to_writer_pretty(
                &mut w,
                &json!({"schema": "sl0lab-schema v1", "transition": report.curve.points}),
            )?;
            writeln!(w)?;
            w.flush()?;
            (cells_path, transition_path)
        }
    };
    for p in &report.curve.points {
        println!("delta={} rho_star={:.4} ({})", p.delta, p.rho_star, p.method.as_str());
    }
    if !report.flagged_deltas.is_empty() {
        eprintln!(
            "warning: non-monotone success rates at delta = {:?}",
            report.flagged_deltas
        );
    }
    eprintln!("wrote {} and {}", cells_path.display(), transition_path.display());
    Ok(())
}

#[derive(Serialize)]
struct TimingJson {
    #[serde(rename = "N")]
    signal_length: usize,
    delta: f64,
    rho: f64,
    trials: usize,
    successes: usize,
    mean_time_s: Option<f64>,
    trial_seeds: Vec<u64>,
    trial_success: Vec<bool>,
    trial_time_s: Vec<Option<f64>>,
}

fn cmd_timing(args: TimingArgs, cfg: &FileConfig) -> Result<()> {
    let name = args
        .common
        .algo
        .or_else(|| cfg.algo.clone())
        .unwrap_or_else(|| "sl0-mss".into());
    let algo = AlgorithmRegistry::builtin().get(&name)?;
    let suite = parse_suite(args.common.suite.as_deref().or(cfg.suite.as_deref()))?;
    let seed = resolve_seed(args.common.seed, cfg)?;
    let transition_path = args
        .transition
        .or_else(|| cfg.transition.clone())
        .ok_or_else(|| anyhow!("--transition is required (a transition CSV from `phase`)"))?;
    let curve = formats::read_transition_csv(open(&transition_path)?)
        .with_context(|| format!("reading {}", transition_path.display()))?;

    let mut spec = if args.full_n || cfg.full_n == Some(true) {
        TimingSpec::full(curve, seed)
    } else {
        TimingSpec::desk(curve, seed)
    };
    spec.suite = suite;
    if let Some(v) = pick(args.signal_length, &cfg.signal_length) {
        spec.signal_lengths = v;
    }
    if let Some(v) = pick(args.delta, &cfg.delta) {
        spec.delta_values = v;
    }
    if let Some(v) = pick(args.rho, &cfg.rho) {
        spec.rho_values = v;
    }
    if let Some(m) = args.margin.or(cfg.margin) {
        spec.margin = m;
    }
    if let Some(t) = args.trials.or(cfg.trials) {
        spec.trials = t;
    }
    let format = parse_format(args.format, cfg)?;
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    let report = run_timing(&spec, algo.as_ref())?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let path = match format {
        Format::Csv => {
            let path = out.join("timing.csv");
            let mut w = create(&path)?;
            formats::write_timing_csv(&mut w, &report)?;
            w.flush()?;
            path
        }
        Format::Json => {
            let path = out.join("timing.json");
            let rows: Vec<TimingJson> = report
                .rows
                .iter()
                .map(|r| TimingJson {
                    signal_length: r.signal_length,
                    delta: r.delta,
                    rho: r.rho,
                    trials: r.trials,
                    successes: r.successes,
                    mean_time_s: r.mean_time.map(|d| d.as_secs_f64()),
                    trial_seeds: r.records.iter().map(|t| t.seed).collect(),
                    trial_success: r.records.iter().map(|t| t.success).collect(),
                    trial_time_s: r
                        .records
                        .iter()
                        .map(|t| t.elapsed.map(|d| d.as_secs_f64()))
                        .collect(),
                })
                .collect();
            let mut w = create(&path)?;
            serde_json::to_writer_pretty(&mut w, &json!({"schema": "sl0lab-schema v1", "rows": rows}))?;
            writeln!(w)?;
            w.flush()?;
            path
        }
    };
    print_timing_summary(&spec, &report);
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn print_timing_summary(spec: &TimingSpec, report: &TimingReport) {
    for &n in &spec.signal_lengths {
        for (delta, t) in report.by_delta(n) {
            println!("N={n} delta={delta} mean_time_s={:.6}", t.as_secs_f64());
        }
    }
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    if !args.label.is_empty() && args.label.len() != args.input.len() {
        bail!("--label must be given once per --input");
    }
    let labels: Vec<String> = args
        .input
        .iter()
        .enumerate()
        .map(|(i, p)| {
            args.label.get(i).cloned().unwrap_or_else(|| {
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("series {}", i + 1))
            })
        })
        .collect();
    let read_err = |p: &Path| format!("reading {}", p.display());

    let plot = match args.kind {
        PlotKind::Transition => {
            let mut curves = Vec::new();
            for (path, label) in args.input.iter().zip(&labels) {
                let curve = formats::read_transition_csv(open(path)?).with_context(|| read_err(path))?;
                curves.push((label.clone(), curve));
            }
            let reference = match &args.reference {
                Some(p) => Some(formats::read_reference_csv(open(p)?).with_context(|| read_err(p))?),
                None => None,
            };
            transition_plot(&curves, reference.as_deref())
        }
        PlotKind::TimeDelta | PlotKind::TimeN => {
            if args.reference.is_some() {
                bail!("--reference applies to transition plots only");
            }
            let mut series = Vec::new();
            let mut by_n = Vec::new();
            for (path, label) in args.input.iter().zip(&labels) {
                let report = formats::read_timing_csv(open(path)?).with_context(|| read_err(path))?;
                if args.kind == PlotKind::TimeDelta {
                    let n = args
                        .signal_length
                        .or_else(|| report.rows.iter().map(|r| r.signal_length).max())
                        .ok_or_else(|| anyhow!("{} has no rows", path.display()))?;
                    series.push((label.clone(), report.by_delta(n)));
                } else {
                    by_n.push((label.clone(), report.by_signal_length(args.delta)));
                }
            }
            if args.kind == PlotKind::TimeDelta {
                time_vs_delta_plot(&series)
            } else {
                time_vs_n_plot(&by_n)
            }
        }
    };
    let mut w = create(&args.out)?;
    w.write_all(plot.render().as_bytes())?;
    w.flush()?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.parallelism.or(cfg.parallelism).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("starting worker pool")?;
    pool.install(|| match cli.command {
        Command::Solve(a) => cmd_solve(a, &cfg),
        Command::Phase(a) => cmd_phase(a, &cfg).map(|()| true),
        Command::Timing(a) => cmd_timing(a, &cfg).map(|()| true),
        Command::Plot(a) => cmd_plot(a).map(|()| true),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
