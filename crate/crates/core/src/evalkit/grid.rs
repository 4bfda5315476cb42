use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mae_metric, mape_metric, Baseline, BaselineKind};
use crate::dataset::{build_samples, chrono_split, ForecastSample};
use crate::error::{Error, Result};
use crate::net::ModelConfig;
use crate::synthgen::ReservationLog;
use crate::tensor::Mat;
use crate::timegrid::{shift_date, SlotSeries};
use crate::training::{train, train_search, SearchSpace, TrainConfig, Variant};

pub const REPORT_HEADER: [&str; 8] =
    ["variant", "setting", "input_days", "horizon_days", "mae", "mape_raw", "mape_pct", "n_samples"];

/// Output channel setting: one total channel or one channel per gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Total,
    Gates,
}

impl Setting {
    pub fn label(self) -> &'static str {
        match self {
            Setting::Total => "total",
            Setting::Gates => "gates",
        }
    }

    fn out_channels(self, gates: usize) -> usize {
        match self {
            Setting::Total => 1,
            Setting::Gates => gates,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A model evaluated on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Candidate {
    Net(Variant),
    Baseline(BaselineKind),
}

impl Candidate {
    pub fn label(self) -> &'static str {
        match self {
            Candidate::Net(v) => v.label(),
            Candidate::Baseline(b) => b.label(),
        }
    }
}

impl std::str::FromStr for Candidate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<Variant>() {
            Ok(v) => Ok(Candidate::Net(v)),
            Err(_) => s.parse::<BaselineKind>().map(Candidate::Baseline).map_err(|_| Error::UnknownVariant(s.into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    /// Architecture; its window's input days, horizon and channel count are set per cell.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub input_days: Vec<usize>,
    pub horizon_days: Vec<usize>,
    pub settings: Vec<Setting>,
    /// Share of samples (chronological) used for training; the rest is the test split.
    pub train_fraction: f64,
    /// When set, network cells pick learning rate and patience on their validation tail.
    pub search: Option<SearchSpace>,
}

impl GridConfig {
    fn validate(&self) -> Result<()> {
        if self.input_days.is_empty() || self.horizon_days.is_empty() || self.settings.is_empty() {
            return Err(Error::Config("evaluation grid has an empty axis".into()));
        }
        if self.input_days.contains(&0) || self.horizon_days.contains(&0) {
            return Err(Error::Config("input and horizon days must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        self.train.validate()
    }
}

/// Metrics for one cell. For the gate setting they are computed on the
/// gate-summed series so both settings compare on total attendance.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub variant: String,
    pub setting: Setting,
    pub input_days: usize,
    pub horizon_days: usize,
    pub mae: f64,
    pub mape_raw: f64,
    pub mape_pct: f64,
    /// Zero-target entries left out of MAPE.
    pub mape_skipped: usize,
    pub n_samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn find(&self, variant: &str, setting: Setting, input_days: usize, horizon_days: usize) -> Option<&EvalRow> {
        self.rows.iter().find(|r| {
            r.variant == variant && r.setting == setting && r.input_days == input_days && r.horizon_days == horizon_days
        })
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Validation(format!("writing report: {e}"));
        w.write_record(REPORT_HEADER).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.variant.clone(),
                r.setting.to_string(),
                r.input_days.to_string(),
                r.horizon_days.to_string(),
                r.mae.to_string(),
                r.mape_raw.to_string(),
                r.mape_pct.to_string(),
                r.n_samples.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Validation(format!("writing report: {e}")))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }
}

/// One predicted value from a test sample. Channel "Total" holds the gate sum.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub variant: String,
    pub setting: Setting,
    pub input_days: usize,
    pub horizon_days: usize,
    pub issue_date: NaiveDate,
    pub target_date: NaiveDate,
    pub slot: usize,
    pub channel: String,
    pub predicted: f64,
    pub actual: f64,
}

pub fn write_predictions_csv(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let err = |e: csv::Error| Error::io(path, e.into());
    w.write_record([
        "variant",
        "setting",
        "input_days",
        "horizon_days",
        "issue_date",
        "target_date",
        "slot",
        "channel",
        "predicted",
        "actual",
    ])
    .map_err(err)?;
    for r in records {
        w.write_record([
            r.variant.clone(),
            r.setting.to_string(),
            r.input_days.to_string(),
            r.horizon_days.to_string(),
            r.issue_date.to_string(),
            r.target_date.to_string(),
            r.slot.to_string(),
            r.channel.clone(),
            r.predicted.to_string(),
            r.actual.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedCell {
    pub variant: String,
    pub setting: Setting,
    pub input_days: usize,
    pub horizon_days: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub skipped: Vec<SkippedCell>,
    pub predictions: Vec<PredictionRecord>,
    /// Cells where a baseline fell back to persistence for some rows.
    pub fallbacks: Vec<String>,
}

struct Cell {
    candidate: Candidate,
    setting: Setting,
    input_days: usize,
    horizon_days: usize,
}

enum CellResult {
    Done {
        row: EvalRow,
        predictions: Vec<PredictionRecord>,
        fell_back: bool,
    },
    Skipped(String),
}

/// Forecast plus whether a baseline fell back to persistence.
type Predictor = Box<dyn Fn(&ForecastSample) -> Result<(Mat<f64>, bool)>>;

/// Row sums of a prediction block.
fn gate_sum(m: &Mat<f64>) -> Vec<f64> {
    (0..m.rows()).map(|r| m.row(r).iter().sum()).collect()
}

fn eval_cell(
    cell: &Cell,
    entrance: &SlotSeries,
    reservations: &ReservationLog,
    config: &GridConfig,
) -> Result<CellResult> {
    let mut model = config.model.clone();
    model.spec.input_days = cell.input_days;
    model.spec.horizon_days = cell.horizon_days;
    model.spec.out_channels = cell.setting.out_channels(entrance.num_channels());

    let samples = match build_samples(entrance, reservations, &model.spec) {
        Ok(s) => s,
        Err(Error::Window(msg)) => return Ok(CellResult::Skipped(msg)),
        Err(e) => return Err(e),
    };
    let split = match chrono_split(samples, config.train_fraction) {
        Ok(s) => s,
        Err(Error::Split(msg)) => return Ok(CellResult::Skipped(msg)),
        Err(e) => return Err(e),
    };

    let predict: Predictor = match cell.candidate {
        Candidate::Net(variant) => {
            if let Err(Error::Split(msg)) = chrono_split(split.train.clone(), 1.0 - config.train.val_fraction_of_train)
            {
                return Ok(CellResult::Skipped(format!("no validation tail: {msg}")));
            }
            let net = variant.apply(&model);
            let trained = match &config.search {
                Some(space) => train_search(&net, &split.train, &config.train, space)?.trained,
                None => train(&net, &split.train, &config.train)?,
            };
            Box::new(move |s| Ok((trained.predict(&s.input)?, false)))
        }
        Candidate::Baseline(kind) => {
            let fitted = Baseline::fit(kind, &split.train)?;
            Box::new(move |s| fitted.predict(&s.input).map(|p| (p.yhat, p.fell_back)))
        }
    };

    let t = model.spec.grid.slots_per_day;
    let channel_names: Vec<String> = match cell.setting {
        Setting::Total => Vec::new(),
        Setting::Gates => entrance.channels().to_vec(),
    };
    let (mut all_pred, mut all_true) = (Vec::new(), Vec::new());
    let mut predictions = Vec::new();
    let mut fell_back = false;
    for s in &split.test {
        let (yhat, fb) = predict(s)?;
        fell_back |= fb;
        if !yhat.all_finite() {
            return Err(Error::Numeric(format!("{} produced non-finite forecasts", cell.candidate.label())));
        }
        let (p_tot, y_tot) = (gate_sum(&yhat), gate_sum(&s.y));
        for r in 0..yhat.rows() {
            let record = |channel: &str, predicted: f64, actual: f64| -> Result<PredictionRecord> {
                Ok(PredictionRecord {
                    variant: cell.candidate.label().to_string(),
                    setting: cell.setting,
                    input_days: cell.input_days,
                    horizon_days: cell.horizon_days,
                    issue_date: s.input.issue_date,
                    target_date: shift_date(s.input.issue_date, (r / t) as i64 + 1)?,
                    slot: r % t,
                    channel: channel.to_string(),
                    predicted,
                    actual,
                })
            };
            for (c, name) in channel_names.iter().enumerate() {
                predictions.push(record(name, yhat.get(r, c), s.y.get(r, c))?);
            }
            predictions.push(record("Total", p_tot[r], y_tot[r])?);
        }
        all_pred.extend(p_tot);
        all_true.extend(y_tot);
    }
    let mae = mae_metric(&all_pred, &all_true)?;
    let mape = mape_metric(&all_pred, &all_true)?;
    Ok(CellResult::Done {
        row: EvalRow {
            variant: cell.candidate.label().to_string(),
            setting: cell.setting,
            input_days: cell.input_days,
            horizon_days: cell.horizon_days,
            mae,
            mape_raw: mape.raw,
            mape_pct: mape.pct,
            mape_skipped: mape.skipped,
            n_samples: split.test.len(),
        },
        predictions,
        fell_back,
    })
}

/// Trains and scores every candidate on every (input days, horizon, setting)
/// cell. Cells run on `jobs` threads (0 = all cores); results keep grid order
/// and do not depend on `jobs`. Cells without enough data are skipped.
pub fn grid_eval(
    entrance: &SlotSeries,
    reservations: &ReservationLog,
    candidates: &[Candidate],
    config: &GridConfig,
    jobs: usize,
) -> Result<EvalOutcome> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(Error::Config("no variants to evaluate".into()));
    }
    let mut cells = Vec::new();
    for &candidate in candidates {
        for &setting in &config.settings {
            for &input_days in &config.input_days {
                for &horizon_days in &config.horizon_days {
                    cells.push(Cell {
                        candidate,
                        setting,
                        input_days,
                        horizon_days,
                    });
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<CellResult>> =
        pool.install(|| cells.par_iter().map(|c| eval_cell(c, entrance, reservations, config)).collect());

    let mut out = EvalOutcome::default();
    for (cell, result) in cells.iter().zip(results) {
        let name = format!(
            "{} / {} / IW {} / H {}",
            cell.candidate.label(),
            cell.setting,
            cell.input_days,
            cell.horizon_days
        );
        match result? {
            CellResult::Done {
                row,
                predictions,
                fell_back,
            } => {
                log::info!("{name}: MAE {:.4} over {} samples", row.mae, row.n_samples);
                if fell_back {
                    log::warn!("{name}: baseline fell back to persistence for part of the horizon");
                    out.fallbacks.push(name);
                }
                out.report.rows.push(row);
                out.predictions.extend(predictions);
            }
            CellResult::Skipped(reason) => {
                log::warn!("{name}: skipped ({reason})");
                out.skipped.push(SkippedCell {
                    variant: cell.candidate.label().to_string(),
                    setting: cell.setting,
                    input_days: cell.input_days,
                    horizon_days: cell.horizon_days,
                    reason,
                });
            }
        }
    }
    Ok(out)
}
