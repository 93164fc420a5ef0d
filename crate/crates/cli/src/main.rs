//! `gradleak`: run gradient inversion experiments from TOML configs.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime or
//! numeric failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradleak::data::save_dataset;
use gradleak::experiment::{
    build_pool, prepare, run_experiment, run_experiment_with, run_sweep, train_stage, AttackConfig,
    ExperimentConfig, SweepAxis, WeightSnapshot,
};
use gradleak::lti::{load_inverter, save_inverter};
use gradleak::metrics::{ordering_line, ReconstructionReport};
use gradleak::model::fingerprint;
use gradleak::{Error, Result};

#[derive(Parser)]
#[command(name = "gradleak", version, about = "Gradient inversion laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured data pool as a dataset file.
    GenData(Common),
    /// Write the configured model weights as a snapshot file.
    SnapshotModel(Common),
    /// Train the learned inverter and save it.
    TrainLti(Common),
    /// Run the optimization baseline and write its report.
    AttackOpt(Common),
    /// Run the configured attack end to end and write its report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// A trained inverter to use instead of training one.
        #[arg(long)]
        inverter: Option<PathBuf>,
    },
    /// Repeat the experiment along one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `aux-size` or `beta`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Summarize JSON reports and rank them by a metric.
    Report {
        /// Report files written by `evaluate`, `attack-opt` or `sweep`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Metric used for the ranking.
        #[arg(long, default_value = "mse")]
        metric: String,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn print_summary(report: &ReconstructionReport) {
    for (metric, agg) in &report.aggregates {
        println!("{metric:>10}  mean {:.6}  std {:.6}", agg.mean, agg.std);
    }
}

fn report_label(path: &Path, report: &ReconstructionReport) -> String {
    let attack = report.manifest["attack"].as_str().unwrap_or("?");
    let defense = report.manifest["defense"]["mechanism"].as_str().unwrap_or("?");
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    format!("{stem}[{attack}/{defense}]")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = load_config(&c)?;
            let pool = build_pool(&cfg)?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            let path = cfg.output.dir.join("data.glkd");
            save_dataset(&pool, &path)?;
            println!("wrote {} items ({}) to {}", pool.len(), pool.fingerprint(), path.display());
        }
        Command::SnapshotModel(c) => {
            let cfg = load_config(&c)?;
            let prep = prepare(&cfg)?;
            let snap = WeightSnapshot {
                model: cfg.model.clone(),
                fingerprint: fingerprint(&prep.model, &prep.w),
                weights: prep.w.clone(),
            };
            std::fs::create_dir_all(&cfg.output.dir)?;
            let path = cfg.output.dir.join("model.json");
            snap.save(&path)?;
            println!("wrote {} weights ({}) to {}", snap.weights.len(), snap.fingerprint, path.display());
        }
        Command::TrainLti(c) => {
            let cfg = load_config(&c)?;
            if !matches!(cfg.attack, AttackConfig::Lti(_)) {
                return Err(Error::config("attack.kind", "train-lti needs kind = \"lti\""));
            }
            let prep = prepare(&cfg)?;
            let (inv, log) = train_stage(&cfg, &prep)?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            let path = cfg.output.dir.join("inverter.glki");
            save_inverter(&inv, &path)?;
            std::fs::write(
                cfg.output.dir.join("training-log.json"),
                serde_json::to_string_pretty(&log)? + "\n",
            )?;
            println!(
                "trained on {} examples; final train loss {:?}, held-out loss {:?}; wrote {}",
                prep.train.len(),
                log.epoch_losses.last(),
                inv.manifest.holdout_loss,
                path.display()
            );
        }
        Command::AttackOpt(c) => {
            let cfg = load_config(&c)?;
            if !matches!(cfg.attack, AttackConfig::OptBaseline(_)) {
                return Err(Error::config("attack.kind", "attack-opt needs kind = \"opt-baseline\""));
            }
            print_summary(&run_experiment(&cfg)?);
        }
        Command::Evaluate { common, inverter } => {
            let cfg = load_config(&common)?;
            let inv = inverter
                .map(|p| load_inverter(&p).map_err(|e| Error::config("--inverter", e.to_string())))
                .transpose()?;
            print_summary(&run_experiment_with(&cfg, inv.as_ref())?);
        }
        Command::Sweep { common, axis, values } => {
            let cfg = load_config(&common)?;
            let axis: SweepAxis = axis.parse()?;
            let sweep = run_sweep(&cfg, axis, &values)?;
            for r in &sweep.rows {
                println!("{}={:<8} {:>10}  mean {:.6}  std {:.6}", axis.name(), r.value, r.metric, r.mean, r.std);
            }
        }
        Command::Report { reports, metric } => {
            let mut means = Vec::new();
            for path in &reports {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::config("reports", format!("{}: {e}", path.display())))?;
                let report: ReconstructionReport = serde_json::from_str(&text)
                    .map_err(|e| Error::config("reports", format!("{}: {e}", path.display())))?;
                let label = report_label(path, &report);
                println!("== {label} ({} samples)", report.records.len());
                print_summary(&report);
                if let Some(m) = report.mean(&metric) {
                    means.push((label, m));
                }
            }
            if means.len() > 1 {
                println!("ordering by {metric} (best first): {}", ordering_line(&means, &metric));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("GRADLEAK_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
