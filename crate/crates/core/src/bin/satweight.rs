use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use satweight::config::RunConfig;
use satweight::eval::{compare_strategies, read_summary, render_table, write_records_csv, write_summary, Strategies, Strategy};
use satweight::io::{read_dataset, write_dataset, Split};
use satweight::nn::{Checkpoint, FeatureSet};
use satweight::pipeline::{prepare_dataset, read_features, sota_params, train_model, write_features, PreparedDataset};
use satweight::sim::generate_campaign;
use satweight::Result;

/// Single-epoch GNSS positioning with learned satellite weights.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores). Overrides `jobs` in the config.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Top-level seed. Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    Full,
    ResidualOnly,
}

impl From<FeatureArg> for FeatureSet {
    fn from(f: FeatureArg) -> Self {
        match f {
            FeatureArg::Full => FeatureSet::Full,
            FeatureArg::ResidualOnly => FeatureSet::ResidualOnly,
        }
    }
}

/// Epoch source: a dataset file or a feature cache written by `featurize`.
#[derive(clap::Args)]
#[group(required = true, multiple = false)]
struct Input {
    /// Dataset file written by `simulate`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Feature cache written by `featurize`.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic campaign dataset.
    Simulate {
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        /// Sessions per profile.
        #[arg(long)]
        sessions: Option<usize>,
        /// Seconds per session.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Compute feature rows, residual matrices and labels for every epoch.
    Featurize {
        #[arg(long)]
        dataset: PathBuf,
        /// Output feature cache.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a weight model on the training split.
    Train {
        #[command(flatten)]
        input: Input,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        feature_set: FeatureArg,
        /// Per-epoch loss log (CSV: epoch,train_loss,val_loss).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from this checkpoint's optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Upper bound on passes over the training split.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Evaluations without improvement before stopping.
        #[arg(long)]
        patience: Option<usize>,
        /// LSTM hidden width.
        #[arg(long)]
        hidden: Option<usize>,
        /// Adam step size.
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Samples per mini-batch.
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Compare weighting strategies on the test split.
    Evaluate {
        #[command(flatten)]
        input: Input,
        /// Checkpoint trained on the full feature set.
        #[arg(long)]
        model_full: Option<PathBuf>,
        /// Checkpoint trained on residual summaries only.
        #[arg(long)]
        model_residual: Option<PathBuf>,
        /// Output directory for errors.csv and summary.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated subset of strategies (default: config list).
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<StrategyArg>>,
    },
    /// Print a summary table from an evaluation summary.
    Report {
        /// summary.json written by `evaluate`.
        #[arg(long)]
        summary: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum StrategyArg {
    GroundTruth,
    NnFull,
    NnResidual,
    FdeSota,
    Equal,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::GroundTruth => Strategy::GroundTruth,
            StrategyArg::NnFull => Strategy::NnFull,
            StrategyArg::NnResidual => Strategy::NnResidual,
            StrategyArg::FdeSota => Strategy::FdeSota,
            StrategyArg::Equal => Strategy::Equal,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.sync_seed();
    Ok(cfg)
}

fn load_input(input: &Input, cfg: &RunConfig) -> Result<PreparedDataset> {
    match (&input.dataset, &input.features) {
        (Some(d), _) => {
            let ds = read_dataset(d)?;
            log::info!("featurizing {} epochs", ds.records.len());
            Ok(prepare_dataset(&ds, &cfg.solver))
        }
        (None, Some(f)) => read_features(f),
        (None, None) => unreachable!("clap enforces one input"),
    }
}

fn write_loss_log(ck: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for e in &ck.report.history {
        w.write_record([e.epoch.to_string(), format!("{:.9}", e.train_loss), format!("{:.9}", e.val_loss)])?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build_global()
        .expect("the global pool is configured once");
    match cli.command {
        Command::Simulate { out, sessions, duration } => {
            if let Some(n) = sessions {
                cfg.simulate.sessions_per_profile = n;
            }
            if let Some(d) = duration {
                cfg.simulate.duration = d;
            }
            let (ds, _) = generate_campaign(&cfg.simulate, cfg.seed)?;
            write_dataset(&ds, &out)?;
            println!(
                "wrote {} epochs from {} sessions to {}",
                ds.records.len(),
                ds.header.sessions.len(),
                out.display()
            );
        }
        Command::Featurize { dataset, out } => {
            let ds = read_dataset(&dataset)?;
            let prepared = prepare_dataset(&ds, &cfg.solver);
            write_features(&prepared, &out)?;
            let failed = prepared.epochs.iter().filter(|p| p.ready().is_none()).count();
            println!("wrote {} epochs ({failed} unusable) to {}", prepared.epochs.len(), out.display());
        }
        Command::Train {
            input,
            out,
            feature_set,
            log,
            resume,
            max_epochs,
            patience,
            hidden,
            learning_rate,
            batch_size,
        } => {
            let t = &mut cfg.train;
            if let Some(v) = max_epochs {
                t.max_epochs = v;
            }
            if let Some(v) = patience {
                t.patience = v;
            }
            if let Some(v) = hidden {
                t.hidden = v;
            }
            if let Some(v) = learning_rate {
                t.learning_rate = v;
            }
            if let Some(v) = batch_size {
                t.batch_size = v;
            }
            cfg.validate()?;
            let prepared = load_input(&input, &cfg)?;
            let previous = resume.map(Checkpoint::load).transpose()?;
            let ck = train_model(&prepared, feature_set.into(), &cfg.train, previous.as_ref())?;
            ck.save(&out)?;
            if let Some(p) = log {
                write_loss_log(&ck, &p)?;
            }
            println!(
                "best validation loss {:.5} at epoch {} ({} epochs run{}), saved {}",
                ck.report.best_val_loss,
                ck.report.best_epoch,
                ck.report.history.len(),
                if ck.report.stopped_early { ", stopped early" } else { "" },
                out.display()
            );
        }
        Command::Evaluate {
            input,
            model_full,
            model_residual,
            out_dir,
            strategies,
        } => {
            let list: Vec<Strategy> = match strategies {
                Some(s) => s.into_iter().map(Strategy::from).collect(),
                None => cfg.eval.strategies.clone(),
            };
            let full = model_full.map(Checkpoint::load).transpose()?;
            let residual = model_residual.map(Checkpoint::load).transpose()?;
            let mut plan = Strategies {
                list,
                full: full.as_ref(),
                residual: residual.as_ref(),
                sota: Default::default(),
                fde: cfg.fde.clone(),
                solver: cfg.solver.clone(),
            };
            plan.check()?;
            let prepared = load_input(&input, &cfg)?;
            plan.sota = sota_params(&prepared, cfg.eval.sota)?;
            let test: Vec<_> = prepared.split(Split::Test).collect();
            let report = compare_strategies(&test, &plan, prepared.header.seed)?;
            std::fs::create_dir_all(&out_dir)?;
            write_records_csv(&report.records, out_dir.join("errors.csv"))?;
            write_summary(&report, out_dir.join("summary.json"))?;
            print!("{}", render_table(&report));
        }
        Command::Report { summary } => {
            print!("{}", render_table(&read_summary(summary)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
