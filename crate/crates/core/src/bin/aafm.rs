use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use aafm::config::{ExperimentConfig, Variant};
use aafm::error::ErrorKind;
use aafm::experiment;

/// Adaptive adversarial factorization machines.
///
/// Environment: AAFM_OUTPUT_ROOT resolves a relative `output_dir`;
/// AAFM_THREADS sets the worker thread count (results do not depend on it).
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(short, long, global = true, default_value = "configs/ml100k-item.toml")]
    config: PathBuf,

    /// Override one configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Override the model variant.
    #[arg(long, global = true)]
    variant: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, split and sample negatives into the dataset cache.
    Prepare,
    /// Write the per-value frequency/variety report and print a summary.
    Stats,
    /// Train the configured variant.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (default: the variant's final checkpoint).
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the external-noise robustness probe on a checkpoint.
    Robustness {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate once per re-weighting ceiling t.
    SweepT {
        #[arg(long = "t", value_delimiter = ',', required = true)]
        t_values: Vec<f64>,
    },
}

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<aafm::Error>().map(aafm::Error::kind) {
        Some(ErrorKind::Config) => EXIT_CONFIG,
        Some(ErrorKind::Data) => EXIT_DATA,
        Some(ErrorKind::Numerical) => EXIT_NUMERICAL,
        Some(ErrorKind::Other) | None => EXIT_OTHER,
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let root = std::env::var_os("AAFM_OUTPUT_ROOT").map(PathBuf::from);
    let mut overrides = cli.overrides.clone();
    if let Some(v) = &cli.variant {
        Variant::parse(v)?;
        overrides.push(format!("variant=\"{v}\""));
    }
    Ok(ExperimentConfig::load(&cli.config, &overrides, root.as_deref())?)
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("AAFM_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| aafm::Error::Config(format!("AAFM_THREADS={raw:?} is not a number")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Prepare => {
            let p = experiment::prepare(&cfg)?;
            println!(
                "{} {} train / {} test samples into {}",
                if p.cache_hit { "cache hit:" } else { "prepared" },
                p.data.train_samples.len(),
                p.data.test_samples.len(),
                show(&cfg.cache_path())
            );
        }
        Command::Stats => {
            let p = experiment::prepare(&cfg)?;
            for line in experiment::stats_summary(&p) {
                println!("{line}");
            }
            println!("report: {}", show(&cfg.output_dir.join("stats.tsv")));
        }
        Command::Train { resume } => {
            let out = experiment::train(&cfg, resume.as_deref())?;
            if let Some(last) = out.state.log.epochs.last() {
                let auc = last.val_auc.map_or_else(|| "-".to_owned(), |a| format!("{a:.4}"));
                println!("{}: {} epochs, test AUC {auc}", cfg.variant, last.epoch);
            }
            println!("checkpoint: {}", show(&out.checkpoint));
        }
        Command::Eval { checkpoint } => {
            let report = experiment::eval(&cfg, checkpoint.as_deref())?;
            let mut out = std::io::stdout().lock();
            report.write_text(&mut out)?;
        }
        Command::Robustness { checkpoint } => {
            let rows = experiment::robustness(&cfg, checkpoint.as_deref())?;
            let mut out = std::io::stdout().lock();
            experiment::write_robustness(&mut out, &rows)?;
        }
        Command::SweepT { t_values } => {
            let rows = experiment::sweep_t(&cfg, t_values)?;
            println!("t\tauc\tstd\tefgd");
            for r in rows {
                println!("{}\t{:.4}\t{:.4}\t{:.4}", r.t, r.auc, r.std, r.efgd);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
