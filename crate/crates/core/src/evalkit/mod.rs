//! Metrics, statistical baselines, the evaluation grid and lag correlations.

mod baselines;
mod corr;
mod grid;

pub use baselines::{Baseline, BaselineKind, BaselinePrediction, RIDGE_LAMBDA};
pub use corr::{lag_correlation, write_corr_csv, CorrMatrix, CorrMode, YearMonth, CORR_HEADER};
pub use grid::{
    grid_eval, write_predictions_csv, Candidate, EvalOutcome, EvalReport, EvalRow, GridConfig, PredictionRecord,
    Setting, SkippedCell, REPORT_HEADER,
};

use crate::error::{Error, Result};

fn check_lengths(yhat: &[f64], y: &[f64]) -> Result<()> {
    if yhat.len() != y.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", yhat.len(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::Shape("no targets".into()));
    }
    Ok(())
}

/// Mean absolute error over all entries.
pub fn mae_metric(yhat: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(yhat, y)?;
    Ok(yhat.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mape {
    /// Mean of |yhat - y| / |y| over nonzero targets.
    pub raw: f64,
    /// `raw * 100`.
    pub pct: f64,
    pub used: usize,
    /// Entries skipped because their target is zero.
    pub skipped: usize,
}

/// MAPE over entries with nonzero targets; zero targets are skipped and counted.
pub fn mape_metric(yhat: &[f64], y: &[f64]) -> Result<Mape> {
    check_lengths(yhat, y)?;
    let mut sum = 0.0;
    let mut used = 0;
    for (p, t) in yhat.iter().zip(y) {
        if *t != 0.0 {
            sum += ((p - t) / t).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::MapeUndefined(y.len()));
    }
    let raw = sum / used as f64;
    Ok(Mape {
        raw,
        pct: raw * 100.0,
        used,
        skipped: y.len() - used,
    })
}

/// Pearson correlation, or `None` with fewer than 3 pairs or a constant side.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Relative threshold so rounding residue of a constant series counts as zero.
    let tiny = |s: f64, m: f64| s <= (m.abs() * 1e-12).powi(2) * n || s == 0.0;
    if tiny(sxx, mx) || tiny(syy, my) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn mae_hand_cases() {
        assert_eq!(mae_metric(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mae_metric(&[1.0, 5.0, -2.0], &[2.0, 2.0, 2.0]).unwrap() - 8.0 / 3.0).abs() < 1e-12);
        assert!((mae_metric(&[0.5], &[0.25]).unwrap() - 0.25).abs() < 1e-12);
        assert!(mae_metric(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae_metric(&[], &[]).is_err());
    }

    #[test]
    fn mape_hand_cases() {
        let m = mape_metric(&[110.0], &[100.0]).unwrap();
        assert!((m.raw - 0.1).abs() < 1e-12);
        assert!((m.pct - 10.0).abs() < 1e-9);

        let m = mape_metric(&[3.0, 7.0, 1.0], &[0.0, 5.0, 2.0]).unwrap();
        assert_eq!((m.used, m.skipped), (2, 1));
        assert!((m.raw - (0.4 + 0.5) / 2.0).abs() < 1e-12);

        assert_eq!(mape_metric(&[1.0, 2.0], &[1.0, 2.0]).unwrap().raw, 0.0);
        assert!(matches!(mape_metric(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::MapeUndefined(2))));
    }

    #[test]
    fn pearson_hand_cases() {
        // x = 1,2,3 ; y = 2,4,7 -> sxy = 5, sxx = 2, syy = 12.667
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap();
        let expected = 5.0 / (2.0f64.sqrt() * (38.0f64 / 3.0).sqrt());
        assert!((r - expected).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), None);
        assert_eq!(pearson(&[4.0, 4.0, 4.0], &[1.0, 2.0, 3.0]), None);
        assert_eq!(pearson(&[0.1; 10], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]), None);
    }

    proptest! {
        #[test]
        fn pearson_properties(
            x in prop::collection::vec(-100.0f64..100.0, 3..40),
            noise in prop::collection::vec(-100.0f64..100.0, 40),
            a in 0.01f64..50.0,
            c in -1e3f64..1e3,
        ) {
            let y: Vec<f64> = x.iter().zip(&noise).map(|(v, e)| v + e).collect();
            if let Some(r) = pearson(&x, &x) {
                prop_assert!((r - 1.0).abs() < 1e-12);
                let neg: Vec<f64> = x.iter().map(|v| -v).collect();
                prop_assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
            }
            if let Some(r) = pearson(&x, &y) {
                prop_assert!(r.abs() <= 1.0 + 1e-12);
                let xs: Vec<f64> = x.iter().map(|v| a * v + c).collect();
                let ys: Vec<f64> = y.iter().map(|v| a * v - c).collect();
                let r2 = pearson(&xs, &ys).unwrap();
                prop_assert!((r - r2).abs() < 1e-9, "{r} vs {r2}");
            }
        }
    }
}
