use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use super::pearson;
use crate::error::{Error, Result};
use crate::synthgen::{ReservationIndex, ReservationLog};
use crate::timegrid::{shift_date, SlotSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn of(date: NaiveDate) -> Self {
        YearMonth {
            year: date.year(),
            month: date.month(),
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrMode {
    /// Daily totals against daily totals `lag` days earlier.
    Visits,
    /// Daily totals against the day's cumulative reservations as known `lag` days before it.
    Reservations,
}

impl CorrMode {
    pub fn label(self) -> &'static str {
        match self {
            CorrMode::Visits => "visits",
            CorrMode::Reservations => "reservations",
        }
    }

    pub fn default_lags(self) -> Vec<usize> {
        match self {
            CorrMode::Visits => (1..=10).collect(),
            CorrMode::Reservations => (0..=10).collect(),
        }
    }
}

/// Monthly lag correlations; `values[m][l]` is `None` where undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrMatrix {
    pub mode: CorrMode,
    pub months: Vec<YearMonth>,
    pub lags: Vec<usize>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrMatrix {
    pub fn get(&self, month: YearMonth, lag: usize) -> Option<f64> {
        let m = self.months.iter().position(|&x| x == month)?;
        let l = self.lags.iter().position(|&x| x == lag)?;
        self.values[m][l]
    }

    /// Appends `mode,month,lag,pearson,defined` rows (no header).
    pub fn write_rows<W: Write>(&self, out: &mut csv::Writer<W>) -> Result<()> {
        for (m, month) in self.months.iter().enumerate() {
            for (l, lag) in self.lags.iter().enumerate() {
                let v = self.values[m][l];
                out.write_record([
                    self.mode.label().to_string(),
                    month.to_string(),
                    lag.to_string(),
                    v.map_or_else(String::new, |r| r.to_string()),
                    v.is_some().to_string(),
                ])
                .map_err(|e| Error::Validation(format!("writing correlation row: {e}")))?;
            }
        }
        Ok(())
    }
}

pub const CORR_HEADER: [&str; 5] = ["mode", "month", "lag", "pearson", "defined"];

/// Writes several matrices into one `corr.csv`.
pub fn write_corr_csv(path: &Path, matrices: &[CorrMatrix]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    w.write_record(CORR_HEADER).map_err(|e| Error::io(path, e.into()))?;
    for m in matrices {
        m.write_rows(&mut w)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pearson correlation per month and lag between daily attendance totals and
/// either lagged totals or reservation snapshots. `months` defaults to every
/// month the series touches. A lag is feasible when the series has at least
/// `lag + 3` days.
pub fn lag_correlation(
    entrance: &SlotSeries,
    reservations: &ReservationLog,
    mode: CorrMode,
    lags: &[usize],
    months: Option<&[YearMonth]>,
) -> Result<CorrMatrix> {
    let n = entrance.num_days();
    let feasible: Vec<usize> = (0..n.saturating_sub(2)).filter(|&l| mode != CorrMode::Visits || l > 0).collect();
    if let Some(&bad) = lags.iter().find(|l| !feasible.contains(l)) {
        return Err(Error::Lag {
            requested: bad,
            feasible,
        });
    }
    if mode == CorrMode::Reservations && reservations.channels() != entrance.channels() {
        return Err(Error::Shape("entrance and reservation gates differ".into()));
    }

    let months: Vec<YearMonth> = match months {
        Some(m) => m.to_vec(),
        None => {
            let mut all: Vec<YearMonth> = (0..n).map(|d| YearMonth::of(entrance.date_of(d))).collect();
            all.dedup();
            all
        }
    };
    let totals = entrance.daily_totals();
    let index = (mode == CorrMode::Reservations).then(|| ReservationIndex::new(reservations));
    let slots = entrance.grid().slots_per_day;
    let gates = entrance.num_channels();

    let mut values = vec![vec![None; lags.len()]; months.len()];
    for (li, &lag) in lags.iter().enumerate() {
        // (month, attendance, predictor) for every day with a defined predictor.
        let mut pairs: Vec<(YearMonth, f64, f64)> = Vec::new();
        for (d, &total) in totals.iter().enumerate() {
            let date = entrance.date_of(d);
            let x = match &index {
                None => match d.checked_sub(lag) {
                    Some(src) => totals[src],
                    None => continue,
                },
                Some(index) => {
                    let as_of = shift_date(date, -(lag as i64))?;
                    let mut sum = 0.0;
                    for s in 0..slots {
                        for g in 0..gates {
                            sum += index.cumulative(date, s, g, as_of);
                        }
                    }
                    sum
                }
            };
            pairs.push((YearMonth::of(date), total, x));
        }
        for (mi, month) in months.iter().enumerate() {
            let (y, x): (Vec<f64>, Vec<f64>) =
                pairs.iter().filter(|p| p.0 == *month).map(|p| (p.1, p.2)).unzip();
            values[mi][li] = pearson(&y, &x);
        }
    }
    Ok(CorrMatrix {
        mode,
        months,
        lags: lags.to_vec(),
        values,
    })
}
