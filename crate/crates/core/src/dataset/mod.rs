//! CSV loading, forecast windows, splitting and standardization.

mod csvio;
mod window;

use serde::{Deserialize, Serialize};

pub use csvio::{
    load_entrance_csv, load_reservations_csv, write_entrance_csv, write_reservations_csv, CsvOptions,
    ENTRANCE_HEADER, RESERVATION_HEADER,
};
pub use window::{build_samples, chrono_split, ForecastInput, ForecastSample, SampleBuilder, Split, WindowSpec};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Channels whose training std falls below this are zeroed.
pub const MIN_STD: f64 = 1e-8;

/// Per-channel mean and population std.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit(rows: &[&Mat<f64>]) -> Result<Self> {
        let cols = rows.first().map(|m| m.cols()).ok_or_else(|| Error::Shape("no rows to fit".into()))?;
        if rows.iter().any(|m| m.cols() != cols) {
            return Err(Error::Shape("inconsistent channel counts".into()));
        }
        let n: usize = rows.iter().map(|m| m.rows()).sum();
        if n == 0 {
            return Err(Error::Shape("no rows to fit".into()));
        }
        let mut mean = vec![0.0; cols];
        for m in rows {
            for r in 0..m.rows() {
                for (acc, v) in mean.iter_mut().zip(m.row(r)) {
                    *acc += v;
                }
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; cols];
        for m in rows {
            for r in 0..m.rows() {
                for c in 0..cols {
                    let d = m.get(r, c) - mean[c];
                    var[c] += d * d;
                }
            }
        }
        let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(ChannelStats { mean, std })
    }

    pub fn is_dropped(&self, c: usize) -> bool {
        !(self.std[c] >= MIN_STD)
    }

    pub fn apply(&self, m: &Mat<f64>) -> Result<Mat<f64>> {
        self.check(m)?;
        Ok(Mat::from_fn(m.rows(), m.cols(), |r, c| {
            if self.is_dropped(c) {
                0.0
            } else {
                (m.get(r, c) - self.mean[c]) / self.std[c]
            }
        }))
    }

    pub fn invert(&self, m: &Mat<f64>) -> Result<Mat<f64>> {
        self.check(m)?;
        Ok(Mat::from_fn(m.rows(), m.cols(), |r, c| {
            if self.is_dropped(c) {
                self.mean[c]
            } else {
                m.get(r, c) * self.std[c] + self.mean[c]
            }
        }))
    }

    fn check(&self, m: &Mat<f64>) -> Result<()> {
        if m.cols() != self.mean.len() {
            return Err(Error::Shape(format!("{} channels, stats fit on {}", m.cols(), self.mean.len())));
        }
        Ok(())
    }
}

/// Standardization of encoder and decoder value channels, fit on training samples only.
/// Targets stay in raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub enc: ChannelStats,
    pub dec: ChannelStats,
}

impl Standardizer {
    pub fn fit(train: &[ForecastSample]) -> Result<Self> {
        let enc: Vec<_> = train.iter().map(|s| &s.input.x_enc).collect();
        let dec: Vec<_> = train.iter().map(|s| &s.input.x_dec).collect();
        let st = Standardizer {
            enc: ChannelStats::fit(&enc)?,
            dec: ChannelStats::fit(&dec)?,
        };
        for (name, stats) in [("encoder", &st.enc), ("decoder", &st.dec)] {
            for c in 0..stats.std.len() {
                if stats.is_dropped(c) {
                    log::warn!("{name} channel {c} is constant on the training split; zeroing it");
                }
            }
        }
        Ok(st)
    }

    /// Standardized copy of the input. `x_dec` keeps raw values elsewhere for the residual path.
    pub fn apply(&self, input: &ForecastInput) -> Result<ForecastInput> {
        Ok(ForecastInput {
            x_enc: self.enc.apply(&input.x_enc)?,
            x_dec: self.dec.apply(&input.x_dec)?,
            ..input.clone()
        })
    }
}
