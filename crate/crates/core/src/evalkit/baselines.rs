use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::dataset::{ForecastInput, ForecastSample};
use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::timegrid::{shift_date, MARK_DIM};

/// Ridge penalty used by [`BaselineKind::ResRidge`].
pub const RIDGE_LAMBDA: f64 = 1.0;
const AR_ORDER: usize = 7;
const WEEK: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    SeasonalNaive,
    Persistence,
    ArP,
    ResRidge,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::SeasonalNaive,
        BaselineKind::Persistence,
        BaselineKind::ArP,
        BaselineKind::ResRidge,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::SeasonalNaive => "seasonal-naive",
            BaselineKind::Persistence => "persistence",
            BaselineKind::ArP => "ar7",
            BaselineKind::ResRidge => "res-ridge",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselinePrediction {
    pub yhat: Mat<f64>,
    /// Some rows used persistence because the input lacked the needed history.
    pub fell_back: bool,
}

#[derive(Clone, Debug)]
enum Fitted {
    Stateless,
    /// Intercept then lags 1..=7, per (slot, channel); `None` when too little data.
    Ar(Option<Vec<Vec<[f64; AR_ORDER + 1]>>>),
    /// Intercept and weights per output channel.
    Ridge(Vec<(f64, Vec<f64>)>),
}

/// A baseline fitted on training samples only.
#[derive(Clone, Debug)]
pub struct Baseline {
    kind: BaselineKind,
    fitted: Fitted,
}

impl Baseline {
    pub fn fit(kind: BaselineKind, train: &[ForecastSample]) -> Result<Self> {
        let fitted = match kind {
            BaselineKind::SeasonalNaive | BaselineKind::Persistence => Fitted::Stateless,
            BaselineKind::ArP => Fitted::Ar(fit_ar(train)?),
            BaselineKind::ResRidge => return Self::fit_ridge(train, RIDGE_LAMBDA),
        };
        Ok(Baseline { kind, fitted })
    }

    /// Reservation ridge regression with a custom penalty.
    pub fn fit_ridge(train: &[ForecastSample], lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("ridge penalty {lambda} must be finite and nonnegative")));
        }
        Ok(Baseline {
            kind: BaselineKind::ResRidge,
            fitted: Fitted::Ridge(fit_ridge(train, lambda)?),
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn predict(&self, input: &ForecastInput) -> Result<BaselinePrediction> {
        match (&self.fitted, self.kind) {
            (Fitted::Stateless, BaselineKind::SeasonalNaive) => Ok(seasonal_naive(input)),
            (Fitted::Stateless, _) => Ok(BaselinePrediction {
                yhat: persistence(input),
                fell_back: false,
            }),
            (Fitted::Ar(coefs), _) => Ok(predict_ar(coefs.as_deref(), input)),
            (Fitted::Ridge(models), _) => predict_ridge(models, input),
        }
    }
}

fn slots_per_day(input: &ForecastInput) -> usize {
    input.x_dec_mark.rows() / input.horizon_days
}

/// Repeats the last input day over the horizon.
fn persistence(input: &ForecastInput) -> Mat<f64> {
    let t = slots_per_day(input);
    let last = input.x_enc.rows() / t - 1;
    Mat::from_fn(input.horizon_days * t, input.x_enc.cols(), |r, c| input.x_enc.get(last * t + r % t, c))
}

/// Same weekday and slot from the most recent observed week; target day
/// `h` (1-based) reads `7 * ceil(h / 7)` days back.
fn seasonal_naive(input: &ForecastInput) -> BaselinePrediction {
    let t = slots_per_day(input);
    let in_days = input.x_enc.rows() / t;
    let mut yhat = persistence(input);
    let mut fell_back = false;
    for h in 1..=input.horizon_days {
        let back = WEEK * h.div_ceil(WEEK);
        // Encoder day index of target day minus `back`.
        let Some(src) = (in_days - 1 + h).checked_sub(back) else {
            fell_back = true;
            continue;
        };
        for s in 0..t {
            for c in 0..yhat.cols() {
                yhat.set((h - 1) * t + s, c, input.x_enc.get(src * t + s, c));
            }
        }
    }
    BaselinePrediction { yhat, fell_back }
}

/// Daily rows (slot-major, channel-minor) stitched from the inputs and targets of `train`.
fn daily_history(train: &[ForecastSample]) -> Result<BTreeMap<NaiveDate, Vec<f64>>> {
    let mut days = BTreeMap::new();
    for s in train {
        let t = slots_per_day(&s.input);
        let w = t * s.y.cols();
        let in_days = s.input.x_enc.rows() / t;
        let first = shift_date(s.input.issue_date, 1 - in_days as i64)?;
        for d in 0..in_days {
            let rows = &s.input.x_enc.as_slice()[d * w..(d + 1) * w];
            days.insert(shift_date(first, d as i64)?, rows.to_vec());
        }
        for d in 0..s.input.horizon_days {
            let rows = &s.y.as_slice()[d * w..(d + 1) * w];
            days.insert(shift_date(s.input.issue_date, d as i64 + 1)?, rows.to_vec());
        }
    }
    Ok(days)
}

type ArCoefs = Vec<Vec<[f64; AR_ORDER + 1]>>;

fn fit_ar(train: &[ForecastSample]) -> Result<Option<ArCoefs>> {
    let Some(first) = train.first() else {
        return Err(Error::Validation("no training samples for the AR baseline".into()));
    };
    let t = slots_per_day(&first.input);
    let channels = first.y.cols();
    let days = daily_history(train)?;
    // Regression rows: days whose previous seven days are all known.
    let mut rows: Vec<[&[f64]; AR_ORDER + 1]> = Vec::new();
    for (date, today) in &days {
        let mut lagged = [today.as_slice(); AR_ORDER + 1];
        let complete = (1..=AR_ORDER).all(|l| {
            match shift_date(*date, -(l as i64)).ok().and_then(|d| days.get(&d)) {
                Some(v) => {
                    lagged[l] = v;
                    true
                }
                None => false,
            }
        });
        if complete {
            rows.push(lagged);
        }
    }
    if rows.len() < AR_ORDER + 1 {
        return Ok(None);
    }
    let mut coefs = vec![vec![[0.0; AR_ORDER + 1]; channels]; t];
    for (s, per_slot) in coefs.iter_mut().enumerate() {
        for (c, out) in per_slot.iter_mut().enumerate() {
            let k = s * channels + c;
            // Centered least squares; the intercept is recovered from the means.
            let x = DMatrix::from_fn(rows.len(), AR_ORDER, |i, j| rows[i][j + 1][k]);
            let y = DVector::from_fn(rows.len(), |i, _| rows[i][0][k]);
            let x_mean = x.row_mean();
            let y_mean = y.mean();
            let xc = DMatrix::from_fn(rows.len(), AR_ORDER, |i, j| x[(i, j)] - x_mean[j]);
            let svd = xc.svd(true, true);
            // Relative cutoff: flat or periodic series give rank-deficient designs.
            let tol = svd.singular_values.max() * 1e-10;
            let beta = svd
                .solve(&y.add_scalar(-y_mean), tol)
                .map_err(|e| Error::Numeric(format!("AR least squares: {e}")))?;
            out[0] = y_mean - (0..AR_ORDER).map(|j| x_mean[j] * beta[j]).sum::<f64>();
            out[1..].copy_from_slice(beta.as_slice());
        }
    }
    Ok(Some(coefs))
}

/// Recursive multi-step AR forecast; persistence if the model or the input history is missing.
fn predict_ar(coefs: Option<&[Vec<[f64; AR_ORDER + 1]>]>, input: &ForecastInput) -> BaselinePrediction {
    let t = slots_per_day(input);
    let in_days = input.x_enc.rows() / t;
    let Some(coefs) = coefs.filter(|_| in_days >= AR_ORDER) else {
        return BaselinePrediction {
            yhat: persistence(input),
            fell_back: true,
        };
    };
    let channels = input.x_enc.cols();
    let w = t * channels;
    let mut history: Vec<f64> = input.x_enc.as_slice()[(in_days - AR_ORDER) * w..].to_vec();
    let mut out = Vec::with_capacity(input.horizon_days * w);
    for _ in 0..input.horizon_days {
        let base = history.len() - AR_ORDER * w;
        let mut day = vec![0.0; w];
        for s in 0..t {
            for c in 0..channels {
                let k = s * channels + c;
                let beta = &coefs[s][c];
                // Lag l reads the day l back from the end of history.
                day[k] = beta[0]
                    + (1..=AR_ORDER)
                        .map(|l| beta[l] * history[base + (AR_ORDER - l) * w + k])
                        .sum::<f64>();
            }
        }
        history.extend_from_slice(&day);
        out.extend_from_slice(&day);
    }
    BaselinePrediction {
        yhat: Mat::from_vec(input.horizon_days * t, channels, out).expect("AR forecast shape"),
        fell_back: false,
    }
}

fn ridge_features(input: &ForecastInput, row: usize) -> Vec<f64> {
    let mut f = input.x_dec.row(row).to_vec();
    f.extend_from_slice(input.x_dec_mark.row(row));
    f
}

/// Centered ridge per output channel with an unpenalized intercept, pooled over horizon rows.
fn fit_ridge(train: &[ForecastSample], lambda: f64) -> Result<Vec<(f64, Vec<f64>)>> {
    let Some(first) = train.first() else {
        return Err(Error::Validation("no training samples for the ridge baseline".into()));
    };
    let p = first.input.x_dec.cols() + MARK_DIM;
    let feats: Vec<Vec<f64>> = train
        .iter()
        .flat_map(|s| (0..s.y.rows()).map(move |r| ridge_features(&s.input, r)))
        .collect();
    let n = feats.len();
    if feats.iter().any(|f| f.len() != p) {
        return Err(Error::Shape("training samples disagree on reservation features".into()));
    }
    let x = DMatrix::from_fn(n, p, |i, j| feats[i][j]);
    let x_mean = x.row_mean();
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - x_mean[j]);
    let mut gram = xc.transpose() * &xc;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let svd = gram.svd(true, true);

    let mut models = Vec::with_capacity(first.y.cols());
    for c in 0..first.y.cols() {
        let y = DVector::from_iterator(n, train.iter().flat_map(|s| s.y.column(c)));
        let y_mean = y.mean();
        let yc = y.add_scalar(-y_mean);
        let beta = svd
            .solve(&(xc.transpose() * yc), 1e-12)
            .map_err(|e| Error::Numeric(format!("ridge solve: {e}")))?;
        let intercept = y_mean - (0..p).map(|j| x_mean[j] * beta[j]).sum::<f64>();
        models.push((intercept, beta.as_slice().to_vec()));
    }
    Ok(models)
}

fn predict_ridge(models: &[(f64, Vec<f64>)], input: &ForecastInput) -> Result<BaselinePrediction> {
    let rows = input.x_dec.rows();
    let mut yhat = Mat::zeros(rows, models.len());
    for r in 0..rows {
        let f = ridge_features(input, r);
        for (c, (b0, beta)) in models.iter().enumerate() {
            if beta.len() != f.len() {
                return Err(Error::Shape(format!("ridge fitted on {} features, input has {}", beta.len(), f.len())));
            }
            yhat.set(r, c, b0 + beta.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    Ok(BaselinePrediction { yhat, fell_back: false })
}
