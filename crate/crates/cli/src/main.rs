use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use resflow::timegrid::parse_date;
use resflow::training::Variant;
use resflow::Result;
use resflow_cli::commands;
use resflow_cli::RunConfig;

#[derive(Parser)]
#[command(name = "resflow", version, about = "Attendance forecasting from reservation dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the generator and training seeds.
    #[arg(long, global = true, env = "RESFLOW_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic entrance and reservation CSVs.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output directory (default: paths.data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model variant and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path (default: <paths.out_dir>/model.exfc).
        #[arg(long)]
        out: Option<PathBuf>,
        /// full, no-inv, dec-only, no-af or dec-only-no-af.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Forecast the horizon after an issue date from a checkpoint.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = parse_issue_date)]
        issue_date: NaiveDate,
        /// Output CSV (default: <paths.out_dir>/forecast.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Evaluate variants and baselines over the input-window x horizon grid.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores; default: grid.jobs).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare the five architecture variants at a 7-day window and 5-day horizon.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Monthly lag correlations of attendance with past visits and reservations.
    Correlate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_issue_date(s: &str) -> std::result::Result<NaiveDate, String> {
    parse_date(s).map_err(|e| e.to_string())
}

fn load(common: &Common, variant: Option<Variant>) -> Result<RunConfig> {
    let mut config = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.generator.seed = seed;
        config.train.seed = seed;
    }
    if let Some(v) = variant {
        config.variant = Some(v.flag().to_string());
    }
    Ok(config)
}

fn eval_paths(
    config: &RunConfig,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
) -> (PathBuf, PathBuf, usize) {
    (
        data.unwrap_or(config.paths.data_dir.clone()),
        out.unwrap_or(config.paths.out_dir.clone()),
        jobs.unwrap_or(config.grid.jobs),
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out } => {
            let config = load(&common, None)?;
            let dir = out.unwrap_or(config.paths.data_dir.clone());
            let (entrance, log) = commands::cmd_generate(&config, &dir)?;
            println!(
                "wrote {} days x {} gates and {} reservation events to {}",
                entrance.num_days(),
                entrance.num_channels(),
                log.events().len(),
                dir.display()
            );
        }
        Command::Train {
            common,
            data,
            out,
            variant,
        } => {
            let config = load(&common, variant)?;
            let data = data.unwrap_or(config.paths.data_dir.clone());
            let out = out.unwrap_or_else(|| config.paths.out_dir.join("model.exfc"));
            let t = commands::cmd_train(&config, &data, &out)?;
            println!(
                "best epoch {} of {}, validation MAE {:.4}, test MAE {:.4} on {} samples; checkpoint {}",
                t.report.best_epoch,
                t.report.stopped_epoch,
                t.report.best_val_loss(),
                t.test_mae,
                t.n_test,
                out.display()
            );
        }
        Command::Predict {
            common,
            checkpoint,
            data,
            issue_date,
            out,
            variant,
        } => {
            // A config file or variant flag states what the checkpoint must be.
            let check = common.config.is_some() || variant.is_some();
            let config = load(&common, variant)?;
            let data = data.unwrap_or(config.paths.data_dir.clone());
            let out = out.unwrap_or_else(|| config.paths.out_dir.join("forecast.csv"));
            let rows = commands::cmd_predict(&checkpoint, &data, issue_date, &out, &config, check)?;
            println!("wrote {rows} forecast rows to {}", out.display());
        }
        Command::Evaluate { common, data, out, jobs } => {
            let config = load(&common, None)?;
            let (data, out, jobs) = eval_paths(&config, data, out, jobs);
            let outcome = commands::cmd_evaluate(&config, &data, &out, jobs)?;
            for s in &outcome.skipped {
                eprintln!(
                    "skipped {} / {} / IW {} / H {}: {}",
                    s.variant, s.setting, s.input_days, s.horizon_days, s.reason
                );
            }
            println!("wrote {} rows to {}", outcome.report.rows.len(), out.join(commands::REPORT_FILE).display());
        }
        Command::Ablate { common, data, out, jobs } => {
            let config = load(&common, None)?;
            let (data, out, jobs) = eval_paths(&config, data, out, jobs);
            let outcome = commands::cmd_ablate(&config, &data, &out, jobs)?;
            for row in &outcome.report.rows {
                println!("{:<16} MAE {:>10.4}  MAPE {:>8.4}", row.variant, row.mae, row.mape_raw);
            }
        }
        Command::Correlate { common, data, out } => {
            let config = load(&common, None)?;
            let data = data.unwrap_or(config.paths.data_dir.clone());
            let out = out.unwrap_or(config.paths.out_dir.clone());
            let m = commands::cmd_correlate(&config, &data, &out)?;
            println!("wrote {} correlation matrices to {}", m.len(), out.join(commands::CORR_FILE).display());
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
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
