//! Pipeline driver: train a routing policy, calibrate the TD-error monitor
//! on nominal traffic, run detection scenarios, and evaluate ROC/AUC.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use routewatch::detector::{load_calibration, save_calibration, DetectorConfig};
use routewatch::experiments::{
    auc_from_points, auc_from_scores, report, roc_points, split_scores, RunBatch,
};
use routewatch::policy::{
    load_checkpoint, save_checkpoint, train, Checkpoint, PpoHyperparams, TrainerConfig,
};
use routewatch::scenario::ScenarioConfig;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "routewatch",
    version,
    about = "MANET routing simulator with a learned forwarding policy and a TD-error drift monitor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shared routing policy on a nominal scenario
    Train(TrainArgs),
    /// Run the frozen policy on nominal episodes and build the calibration set
    Calibrate(CalibrateArgs),
    /// Execute the frozen policy in a scenario and run the per-node detectors
    Detect(DetectArgs),
    /// Compute ROC points and AUC from nominal and anomalous run records
    Roc(RocArgs),
    /// Render CSV tables and SVG plots from run records and a ROC table
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Scenario TOML (must have anomaly = none)
    #[arg(long)]
    config: PathBuf,
    /// Output checkpoint path (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Training log output (JSON lines, one record per iteration)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Override the scenario seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long, default_value_t = 8)]
    episodes_per_iter: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Nominal scenario TOML
    #[arg(long)]
    config: PathBuf,
    /// Number of nominal episodes to pool
    #[arg(long, default_value_t = 40)]
    episodes: usize,
    /// Output calibration path (JSON)
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// kNN neighbor count
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Embedding window over consecutive TD-errors (1 = scalar)
    #[arg(long, default_value_t = 1)]
    window: usize,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    calibration: PathBuf,
    /// Scenario TOML (nominal or anomalous)
    #[arg(long)]
    config: PathBuf,
    /// Output run-record file (JSON)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Acceptance level on the nominal kNN distribution
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Alarm threshold on the decision statistic
    #[arg(long, default_value_t = 50.0)]
    h: f64,
    /// p-value clamp; defaults to the calibration smoothing floor
    #[arg(long)]
    p_floor: Option<f64>,
    /// Drop per-node traces from the output (keeps aggregate scores)
    #[arg(long)]
    no_traces: bool,
    /// Also export raw simulator events as JSON lines
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Args)]
struct RocArgs {
    /// Run-record files with nominal episodes (repeatable)
    #[arg(long, required = true, num_args = 1..)]
    nominal: Vec<PathBuf>,
    /// Run-record files with anomalous episodes (repeatable)
    #[arg(long, required = true, num_args = 1..)]
    anomalous: Vec<PathBuf>,
    /// Explicit comma-separated threshold grid, e.g. "0.5,2.5,4.5"
    #[arg(long)]
    h_grid: Option<String>,
    /// Grid size when --h-grid is not given
    #[arg(long, default_value_t = 101)]
    grid_steps: usize,
    /// Output ROC table (CSV with columns h,fpr,tpr)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run-record files (repeatable)
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// ROC CSV produced by `roc`
    #[arg(long)]
    roc: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Roc(args) => cmd_roc(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_scenario(path: &Path, seed_override: Option<u64>) -> Result<(ScenarioConfig, u64)> {
    let cfg = ScenarioConfig::load(path)
        .with_context(|| format!("loading scenario {}", path.display()))?;
    let seed = seed_override.unwrap_or(cfg.seed);
    Ok((cfg, seed))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (scenario, seed) = load_scenario(&args.config, args.seed)?;
    let tc = TrainerConfig {
        iterations: args.iterations,
        episodes_per_iter: args.episodes_per_iter,
        hp: PpoHyperparams::default(),
        seed,
    };
    let out = train(&scenario, &tc)?;
    let ckpt = Checkpoint::new(
        &out.actor,
        &out.critic,
        tc.hp,
        scenario.cq_params(),
        scenario.reward_weights(),
    );
    save_checkpoint(&args.out, &ckpt)
        .with_context(|| format!("writing checkpoint {}", args.out.display()))?;
    if let Some(log_path) = &args.log {
        let mut f = std::fs::File::create(log_path)
            .with_context(|| format!("writing training log {}", log_path.display()))?;
        for line in &out.log {
            writeln!(f, "{}", serde_json::to_string(line)?)?;
        }
    }
    if let Some(last) = out.log.last() {
        println!(
            "trained {} iterations: mean reward {:.3}, delivery ratio {:.3}",
            out.log.len(),
            last.mean_reward,
            last.delivery_ratio
        );
    } else {
        println!("wrote initialization checkpoint (0 iterations)");
    }
    println!("checkpoint: {}", args.out.display());
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let (scenario, seed) = load_scenario(&args.config, args.seed)?;
    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let calib = routewatch::experiments::run_calibration(
        &ckpt,
        &scenario,
        args.episodes,
        args.k,
        args.window,
        seed,
    )?;
    save_calibration(&args.out, &calib)
        .with_context(|| format!("writing calibration {}", args.out.display()))?;
    println!(
        "calibrated on {} episodes: {} samples, k = {}, window = {}",
        args.episodes,
        calib.len(),
        calib.k(),
        calib.window()
    );
    println!("calibration: {}", args.out.display());
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let (scenario, seed) = load_scenario(&args.config, args.seed)?;
    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let calib = load_calibration(&args.calibration)
        .with_context(|| format!("loading calibration {}", args.calibration.display()))?;
    let cfg = DetectorConfig {
        k: calib.k(),
        alpha: args.alpha,
        h: args.h,
        p_floor: args.p_floor,
        window: calib.window(),
    };
    let mut records = routewatch::experiments::run_detection(
        &ckpt,
        &calib,
        &scenario,
        &cfg,
        args.episodes,
        seed,
        args.events.is_some(),
    )?;

    if let Some(events_path) = &args.events {
        let mut f = std::fs::File::create(events_path)
            .with_context(|| format!("writing events {}", events_path.display()))?;
        for (i, rec) in records.iter_mut().enumerate() {
            for ev in rec.events.drain(..) {
                let mut line = serde_json::to_value(&ev)?;
                line.as_object_mut()
                    .expect("event serializes to an object")
                    .insert("episode".into(), serde_json::Value::from(i));
                writeln!(f, "{line}")?;
            }
        }
    }
    if args.no_traces {
        for rec in &mut records {
            rec.node_traces.clear();
        }
    }

    let alarmed = records
        .iter()
        .filter(|r| r.node_traces.iter().any(|t| t.alarm_slot.is_some()))
        .count();
    let mean_score =
        records.iter().map(|r| r.episode_score).sum::<f64>() / records.len().max(1) as f64;
    let batch = RunBatch::new(
        scenario.anomaly.kind_name(),
        scenario.anomaly.label(),
        records,
    );
    batch
        .save(&args.out)
        .with_context(|| format!("writing run records {}", args.out.display()))?;
    println!(
        "{} episodes ({}): mean episode score {:.3}, {}/{} with node alarms at h = {}",
        batch.records.len(),
        batch.label,
        mean_score,
        alarmed,
        batch.records.len(),
        args.h
    );
    println!("run records: {}", args.out.display());
    Ok(())
}

fn parse_h_grid(raw: &str) -> Result<Vec<f64>> {
    let grid: Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let grid = grid.context("parsing --h-grid")?;
    if grid.is_empty() {
        bail!("--h-grid must contain at least one threshold");
    }
    Ok(grid)
}

fn cmd_roc(args: RocArgs) -> Result<()> {
    let mut batches = Vec::new();
    for (paths, expect) in [(&args.nominal, "nominal"), (&args.anomalous, "anomalous")] {
        for p in paths {
            let batch =
                RunBatch::load(p).with_context(|| format!("loading run records {}", p.display()))?;
            if batch.label != expect {
                bail!(
                    "{} holds {} episodes but was passed as --{expect}",
                    p.display(),
                    batch.label
                );
            }
            batches.push(batch);
        }
    }
    let (nominal, anomalous) = split_scores(&batches)?;
    if nominal.is_empty() || anomalous.is_empty() {
        bail!("both classes need at least one episode");
    }
    let grid = match &args.h_grid {
        Some(raw) => parse_h_grid(raw)?,
        None => routewatch::experiments::roc::default_h_grid(&nominal, &anomalous, args.grid_steps),
    };
    let points = roc_points(&nominal, &anomalous, &grid);
    report::write_roc_csv(&args.out, &points)
        .with_context(|| format!("writing ROC table {}", args.out.display()))?;
    println!(
        "{} nominal / {} anomalous episodes over {} thresholds",
        nominal.len(),
        anomalous.len(),
        grid.len()
    );
    println!(
        "AUC = {:.4} (exact), {:.4} (grid staircase)",
        auc_from_scores(&nominal, &anomalous),
        auc_from_points(&points)
    );
    println!("roc table: {}", args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for path in &args.runs {
        let batch =
            RunBatch::load(path).with_context(|| format!("loading run records {}", path.display()))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("runs")
            .to_string();
        let scores_csv = args.out_dir.join(format!("{stem}_scores.csv"));
        report::write_aggregate_csv(&scores_csv, &batch.records)?;
        report::plot_score_trace_svg(&scores_csv, &args.out_dir.join(format!("{stem}_scores.svg")))?;
        for (i, rec) in batch.records.iter().enumerate() {
            if !rec.node_traces.is_empty() {
                report::write_trace_csv(
                    &args.out_dir.join(format!("{stem}_record{i:03}_trace.csv")),
                    rec,
                )?;
            }
        }
        println!(
            "{}: {} records ({}), score trace written",
            stem,
            batch.records.len(),
            batch.label
        );
    }
    if let Some(roc_path) = &args.roc {
        let target = args.out_dir.join("roc.csv");
        std::fs::copy(roc_path, &target)
            .with_context(|| format!("copying {}", roc_path.display()))?;
        report::plot_roc_svg(&target, &args.out_dir.join("roc.svg"))?;
        println!("roc curve rendered");
    }
    println!("report: {}", args.out_dir.display());
    Ok(())
}
