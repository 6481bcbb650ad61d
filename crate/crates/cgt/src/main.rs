use std::path::PathBuf;
use std::process::ExitCode;

use cgt::config::RunConfig;
use cgt::error::{Error, Result};
use cgt::experiment::{run_experiment, ExperimentPlan, ExperimentResults};
use cgt::model_file::load_model;
use cgt::pipeline::{self, Mode};
use cgt::report::write_report;
use cgt::run::{require, RunDir};
use cgt_core::coverage::MetricSelection;
use clap::{Parser, Subcommand};

/// Coverage-guided testing of a small convolutional person detector.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Run directory holding every input and output.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Run seed; overrides the config's `seed` and `fuzz.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config JSON; defaults to `<run-dir>/config.json` when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default config to the run directory.
    Init,
    /// Generate the synthetic train_val and test sets.
    GenData {
        #[arg(long)]
        n_train_val: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Split train_val 2:1 and build the derived test sets.
    Split {
        /// Directory of precomputed adversarial images, `<id>.png`.
        #[arg(long)]
        adv_dir: Option<PathBuf>,
    },
    TrainBaseline,
    /// Profile neuron ranges of the baseline on the retraining pool.
    Profile,
    /// Generate pseudo-adversarial stand-in images with the baseline.
    GenAdv,
    Fuzz {
        #[arg(long, value_enum, default_value = "natural")]
        mode: Mode,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<MetricSelection>,
        #[arg(long)]
        alpha_map: Option<f64>,
    },
    BuildRetrainSet {
        /// Cell directory name printed by `fuzz`.
        #[arg(long)]
        cell: String,
    },
    Retrain {
        #[arg(long)]
        cell: String,
    },
    /// Score a model (the baseline by default) on every test set.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Regenerate the corruption grid.
    Corrupt,
    /// Re-render the report from `experiment/results.json`.
    Report,
    Experiment {
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

fn parse_metric(s: &str) -> Result<MetricSelection, String> {
    MetricSelection::parse(s).ok_or_else(|| format!("unknown metric {s:?}; expected none, nc, snac, nbc or nbc+snac"))
}

fn load_config(cli: &Cli, run: &RunDir) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None if run.config().exists() => RunConfig::load(&run.config())?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.fuzz.seed = seed;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("value serializes"));
}

fn run(cli: Cli) -> Result<()> {
    let run = RunDir::new(&cli.run_dir);
    let mut cfg = load_config(&cli, &run)?;
    match cli.command {
        Command::Init => cfg.save(&run.config())?,
        Command::GenData { n_train_val, n_test } => {
            cfg.data.n_train_val = n_train_val.unwrap_or(cfg.data.n_train_val);
            cfg.data.n_test = n_test.unwrap_or(cfg.data.n_test);
            cfg.validate()?;
            pipeline::gen_data(&run, &cfg)?;
        }
        Command::Split { adv_dir } => pipeline::split(&run, &cfg, adv_dir.as_deref())?,
        Command::TrainBaseline => {
            pipeline::train_baseline(&run, &cfg)?;
        }
        Command::Profile => {
            pipeline::profile(&run)?;
        }
        Command::GenAdv => pipeline::gen_adv(&run, &cfg)?,
        Command::Fuzz { mode, metric, alpha_map } => {
            cfg.fuzz.metric = metric.unwrap_or(cfg.fuzz.metric);
            cfg.fuzz.alpha_map = alpha_map.unwrap_or(cfg.fuzz.alpha_map);
            cfg.validate()?;
            let (summary, _) = pipeline::fuzz(&run, &cfg, mode)?;
            println!("{}\t{} bugs", summary.cell, summary.bugs);
        }
        Command::BuildRetrainSet { cell } => {
            let recs = pipeline::build_retrain_set(&run, &cell)?;
            println!("{} images", recs.len());
        }
        Command::Retrain { cell } => {
            pipeline::retrain(&run, &cfg, &cell)?;
        }
        Command::Eval { model } => {
            let path = model.unwrap_or_else(|| run.baseline_model());
            require(&path, "train-baseline")?;
            let scores = pipeline::evaluate(&run, &cfg, &load_model(&path)?)?;
            print_json(&scores);
        }
        Command::Corrupt => pipeline::corrupt(&run, &cfg)?,
        Command::Report => {
            require(&run.results(), "experiment")?;
            let results: ExperimentResults = pipeline::read_json(&run.results())?;
            write_report(&run, &results)?;
        }
        Command::Experiment { plan } => {
            let plan = match plan {
                Some(p) => pipeline::read_json::<ExperimentPlan>(&p).map_err(|e| Error::Usage(e.to_string()))?,
                None => ExperimentPlan::default(),
            };
            run_experiment(&run, &cfg, &plan)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
