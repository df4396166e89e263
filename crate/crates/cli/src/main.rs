use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pure_cli::commands::{self, SweepParam, THEORY_HEADER};
use pure_cli::config::ConfigArgs;
use pure_core::eval::MetricsReport;

#[derive(Debug, Parser)]
#[command(
    name = "pure",
    version,
    about = "Positive-unlabeled adversarial recommender"
)]
struct Cli {
    /// Worker threads for evaluation; defaults to all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and split a dataset, print its statistics and store the split.
    Ingest(ConfigArgs),
    /// Train a model and write its checkpoint and epoch log.
    Train(ConfigArgs),
    /// Score a checkpoint on a stored split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Defaults to `<output_dir>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<output_dir>/split`.
        #[arg(long)]
        split_dir: Option<PathBuf>,
    },
    /// Train and evaluate once per grid value of one hyper-parameter.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated grid.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Print the unlabeled sample size needed for a given prior.
    Bound {
        #[arg(long)]
        pi_p: f64,
        #[arg(long = "c", default_value_t = 1.0)]
        c_ratio: f64,
        #[arg(long, default_value_t = 1)]
        n_p: usize,
    },
    /// Check the closed-form objective identities on random finite supports.
    TheoryCheck {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Move one generated mass off equilibrium; checks the certificate notices.
        #[arg(long)]
        perturb: bool,
    },
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    match cli.command {
        Command::Ingest(args) => {
            let cfg = args.resolve()?;
            println!("{}", commands::ingest(&cfg)?);
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let model = commands::train(&cfg)?;
            println!(
                "trained {} for {} epochs; wrote {}",
                model.kind,
                model.history.len(),
                cfg.output_dir.display()
            );
        }
        Command::Evaluate {
            config,
            checkpoint,
            split_dir,
        } => {
            let cfg = config.resolve()?;
            let report = commands::evaluate_run(&cfg, checkpoint.as_deref(), split_dir.as_deref())?;
            println!("{}\n{}", MetricsReport::CSV_HEADER, report.csv_row());
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let cfg = config.resolve()?;
            println!("{}", commands::SWEEP_HEADER);
            for row in commands::sweep(&cfg, param, &values)? {
                println!("{row}");
            }
        }
        Command::Bound { pi_p, c_ratio, n_p } => {
            print!("{}", commands::bound(pi_p, c_ratio, n_p)?);
        }
        Command::TheoryCheck {
            instances,
            seed,
            perturb,
        } => {
            let rows = commands::theory_check(instances, seed, perturb)?;
            println!("{THEORY_HEADER}");
            for r in &rows {
                println!("{r}");
            }
            let failed: Vec<usize> = rows.iter().filter(|r| !r.passed).map(|r| r.id).collect();
            if !failed.is_empty() {
                eprintln!(
                    "{} instance(s) failed (seed {seed}): {failed:?}",
                    failed.len()
                );
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
