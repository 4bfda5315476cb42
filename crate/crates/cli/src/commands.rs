//! Subcommand implementations. Each writes its outputs and returns a summary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Serialize;

use resflow::dataset::{
    build_samples, chrono_split, load_entrance_csv, load_reservations_csv, write_entrance_csv,
    write_reservations_csv, CsvOptions, SampleBuilder,
};
use resflow::evalkit::{
    grid_eval, lag_correlation, mae_metric, write_corr_csv, write_predictions_csv, Candidate, CorrMatrix, CorrMode,
    EvalOutcome, Setting,
};
use resflow::fusion::Decomposition;
use resflow::net::ModelInput;
use resflow::synthgen::{generate_attendance, generate_reservations, GeneratorConfig, ReservationLog};
use resflow::tensor::Mat;
use resflow::timegrid::{shift_date, SlotSeries};
use resflow::training::{train, train_search, TrainReport, Variant};
use resflow::{Error, Result};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;

pub const ENTRANCE_FILE: &str = "entrance.csv";
pub const RESERVATIONS_FILE: &str = "reservations.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const CORR_FILE: &str = "corr.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    entrance: &'a str,
    reservations: &'a str,
    generator: &'a GeneratorConfig,
}

/// Writes `entrance.csv`, `reservations.csv` and `manifest.toml` into `out_dir`.
pub fn cmd_generate(config: &RunConfig, out_dir: &Path) -> Result<(SlotSeries, ReservationLog)> {
    // Validate before touching the filesystem.
    config.generator.validate()?;
    let entrance = generate_attendance(&config.generator)?;
    let log = generate_reservations(&entrance, &config.generator)?;
    create_dir(out_dir)?;
    write_entrance_csv(&entrance, out_dir.join(ENTRANCE_FILE))?;
    write_reservations_csv(&log, out_dir.join(RESERVATIONS_FILE))?;
    let manifest = Manifest {
        seed: config.generator.seed,
        entrance: ENTRANCE_FILE,
        reservations: RESERVATIONS_FILE,
        generator: &config.generator,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok((entrance, log))
}

/// Loads both CSVs from `data_dir`; the reservation span follows the entrance span.
pub fn load_data(config: &RunConfig, data_dir: &Path) -> Result<(SlotSeries, ReservationLog)> {
    if !data_dir.is_dir() {
        return Err(Error::Config(format!("data directory {} does not exist", data_dir.display())));
    }
    let opts = config.csv_options();
    let entrance = load_entrance_csv(data_dir.join(ENTRANCE_FILE), &opts)?;
    let log = load_reservations_csv(
        data_dir.join(RESERVATIONS_FILE),
        &CsvOptions {
            span: Some((entrance.start_date(), entrance.num_days())),
            ..opts
        },
    )?;
    Ok((entrance, log))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// MAE on the held-out test split, in counts.
    pub test_mae: f64,
    pub n_test: usize,
}

/// Trains on the chronological train split and writes the checkpoint plus
/// `train_log.csv` beside it.
pub fn cmd_train(config: &RunConfig, data_dir: &Path, checkpoint: &Path) -> Result<TrainOutcome> {
    let model_config = config.model_config()?;
    let (entrance, log) = load_data(config, data_dir)?;
    let samples = build_samples(&entrance, &log, &model_config.spec)?;
    let split = chrono_split(samples, config.grid.train_fraction)?;
    log::info!(
        "{} train / {} test samples ({} purged)",
        split.train.len(),
        split.test.len(),
        split.purged
    );
    let trained = match &config.search {
        Some(space) => {
            let found = train_search(&model_config, &split.train, &config.train, space)?;
            for (lr, patience, val) in &found.trials {
                log::info!("learning rate {lr}, patience {patience}: validation MAE {val:.4}");
            }
            found.trained
        }
        None => train(&model_config, &split.train, &config.train)?,
    };

    let (mut pred, mut actual) = (Vec::new(), Vec::new());
    for s in &split.test {
        pred.extend_from_slice(trained.predict(&s.input)?.as_slice());
        actual.extend_from_slice(s.y.as_slice());
    }
    let test_mae = mae_metric(&pred, &actual)?;

    if let Some(dir) = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    Checkpoint {
        model: trained.model,
        standardizer: trained.standardizer,
        seed: config.train.seed,
    }
    .save(checkpoint)?;
    write_train_log(&train_log_path(checkpoint), &trained.report)?;
    Ok(TrainOutcome {
        report: trained.report,
        test_mae,
        n_test: split.test.len(),
    })
}

pub fn train_log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_file_name(TRAIN_LOG_FILE)
}

fn write_train_log(path: &Path, report: &TrainReport) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "epoch,train_loss,val_loss,best").map_err(io)?;
    for (i, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
        writeln!(w, "{},{t},{v},{}", i + 1, i + 1 == report.best_epoch).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `forecast.csv` for the `horizon_days` days after `issue_date`.
/// With `requested`, the checkpoint must match its model configuration.
pub fn cmd_predict(
    checkpoint: &Path,
    data_dir: &Path,
    issue_date: NaiveDate,
    out: &Path,
    config: &RunConfig,
    check_config: bool,
) -> Result<usize> {
    let ck = Checkpoint::load(checkpoint)?;
    if check_config {
        ck.check_config(&config.model_config()?)?;
    }
    let spec = &ck.model.config().spec;
    let (entrance, log) = load_data(config, data_dir)?;
    let input = SampleBuilder::new(&entrance, &log, spec)?.input(issue_date)?;
    let forecast = ck.model.forward(&ModelInput::prepare(&input, &ck.standardizer)?, None)?;

    let channels: Vec<String> = if spec.out_channels == 1 {
        vec!["Total".into()]
    } else {
        entrance.channels().to_vec()
    };
    let t = spec.grid.slots_per_day;
    let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = |e: csv::Error| Error::io(out, e.into());
    w.write_record(["target_date", "slot", "hour", "channel", "predicted", "baseline", "gate", "smoothed"])
        .map_err(err)?;
    let mut rows = 0;
    for (c, name) in channels.iter().enumerate() {
        for r in 0..forecast.yhat.rows() {
            let part = |m: fn(&Decomposition<f64>) -> &Mat<f64>| {
                forecast.parts.as_ref().map_or_else(String::new, |p| m(p).get(r, c).to_string())
            };
            w.write_record([
                shift_date(issue_date, (r / t) as i64 + 1)?.to_string(),
                (r % t).to_string(),
                spec.grid.hour_of_slot(r % t)?.to_string(),
                name.clone(),
                forecast.yhat.get(r, c).to_string(),
                part(|p| &p.baseline),
                part(|p| &p.gate),
                part(|p| &p.smoothed),
            ])
            .map_err(err)?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(rows)
}

fn write_outcome(out_dir: &Path, outcome: &EvalOutcome) -> Result<()> {
    create_dir(out_dir)?;
    outcome.report.write_csv(&out_dir.join(REPORT_FILE))?;
    write_predictions_csv(&out_dir.join(PREDICTIONS_FILE), &outcome.predictions)
}

/// Runs the configured evaluation grid; writes `report.csv` and `predictions.csv`.
pub fn cmd_evaluate(config: &RunConfig, data_dir: &Path, out_dir: &Path, jobs: usize) -> Result<EvalOutcome> {
    let candidates = config.candidates()?;
    let (entrance, log) = load_data(config, data_dir)?;
    let outcome = grid_eval(&entrance, &log, &candidates, &config.grid_config(), jobs)?;
    write_outcome(out_dir, &outcome)?;
    Ok(outcome)
}

pub const ABLATION_INPUT_DAYS: usize = 7;
pub const ABLATION_HORIZON_DAYS: usize = 5;

/// The five architecture variants at a 7-day input window and 5-day horizon,
/// in the configured channel setting.
pub fn cmd_ablate(config: &RunConfig, data_dir: &Path, out_dir: &Path, jobs: usize) -> Result<EvalOutcome> {
    let (entrance, log) = load_data(config, data_dir)?;
    let mut grid = config.grid_config();
    grid.input_days = vec![ABLATION_INPUT_DAYS];
    grid.horizon_days = vec![ABLATION_HORIZON_DAYS];
    grid.settings = vec![if config.model.spec.out_channels == 1 {
        Setting::Total
    } else {
        Setting::Gates
    }];
    let candidates: Vec<Candidate> = Variant::ALL.into_iter().map(Candidate::Net).collect();
    let outcome = grid_eval(&entrance, &log, &candidates, &grid, jobs)?;
    if !outcome.skipped.is_empty() {
        return Err(Error::Window(format!(
            "data too short for the ablation window: {}",
            outcome.skipped[0].reason
        )));
    }
    write_outcome(out_dir, &outcome)?;
    Ok(outcome)
}

/// Monthly lag correlations in both modes, written to `corr.csv`.
pub fn cmd_correlate(config: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<Vec<CorrMatrix>> {
    let (entrance, log) = load_data(config, data_dir)?;
    let matrices = [CorrMode::Reservations, CorrMode::Visits]
        .into_iter()
        .map(|mode| lag_correlation(&entrance, &log, mode, &mode.default_lags(), None))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out_dir)?;
    write_corr_csv(&out_dir.join(CORR_FILE), &matrices)?;
    Ok(matrices)
}
