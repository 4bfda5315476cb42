//! Encoder/decoder sample construction and the chronological split.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::{ReservationIndex, ReservationLog};
use crate::tensor::Mat;
use crate::timegrid::{build_mark, shift_date, SlotGrid, SlotSeries, MARK_DIM};

/// Input window, horizon and channel layout of forecast samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub input_days: usize,
    pub horizon_days: usize,
    pub grid: SlotGrid,
    /// 1 forecasts the gate total, otherwise one channel per gate.
    pub out_channels: usize,
    /// Snapshot offsets in days before the issue date; each yields one
    /// cumulative-reservation channel per output channel.
    pub res_feature_lags: Vec<usize>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            input_days: 7,
            horizon_days: 5,
            grid: SlotGrid::default(),
            out_channels: 2,
            res_feature_lags: vec![0, 1],
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.input_days < 1 || self.horizon_days < 1 {
            return Err(Error::Config("input_days and horizon_days must be at least 1".into()));
        }
        if !(1..=2).contains(&self.out_channels) {
            return Err(Error::Config(format!("out_channels must be 1 or 2, got {}", self.out_channels)));
        }
        if self.res_feature_lags.is_empty() {
            return Err(Error::Config("res_feature_lags must not be empty".into()));
        }
        Ok(())
    }

    pub fn enc_len(&self) -> usize {
        self.input_days * self.grid.slots_per_day
    }

    pub fn dec_len(&self) -> usize {
        self.horizon_days * self.grid.slots_per_day
    }

    /// Encoder value channels.
    pub fn real_channels(&self) -> usize {
        self.out_channels
    }

    /// Decoder reservation channels.
    pub fn res_channels(&self) -> usize {
        self.out_channels * self.res_feature_lags.len()
    }
}

/// Everything the model sees for one issue date, in raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastInput {
    pub issue_date: NaiveDate,
    pub horizon_days: usize,
    /// `(D_in*T) x C_real` entrance counts up to the issue date.
    pub x_enc: Mat<f64>,
    pub x_enc_mark: Mat<f64>,
    /// `(D_out*T) x C_res` cumulative reservations snapshotted at or before
    /// the issue date.
    pub x_dec: Mat<f64>,
    pub x_dec_mark: Mat<f64>,
    /// Latest booking date among events feeding `x_dec`.
    pub dec_last_booking: Option<NaiveDate>,
    /// Last entrance date feeding `x_enc`.
    pub enc_last_date: NaiveDate,
}

impl ForecastInput {
    pub fn first_target(&self) -> NaiveDate {
        shift_date(self.issue_date, 1).expect("target date")
    }

    pub fn last_target(&self) -> NaiveDate {
        shift_date(self.issue_date, self.horizon_days as i64).expect("target date")
    }
}

/// A [`ForecastInput`] with its `(D_out*T) x C_out` target block.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastSample {
    pub input: ForecastInput,
    pub y: Mat<f64>,
}

fn mark_block(first: NaiveDate, days: usize, grid: &SlotGrid) -> Result<Mat<f64>> {
    let t = grid.slots_per_day;
    let mut m = Mat::zeros(days * t, MARK_DIM);
    for d in 0..days {
        let date = shift_date(first, d as i64)?;
        for s in 0..t {
            m.row_mut(d * t + s).copy_from_slice(&build_mark(date, s, grid)?.to_array());
        }
    }
    Ok(m)
}

/// Gate indices summed into each output channel.
fn channel_groups(gates: usize, out_channels: usize) -> Vec<Vec<usize>> {
    if out_channels == 1 {
        vec![(0..gates).collect()]
    } else {
        (0..gates).map(|g| vec![g]).collect()
    }
}

fn check_compatible(entrance: &SlotSeries, log: &ReservationLog, spec: &WindowSpec) -> Result<()> {
    spec.validate()?;
    if entrance.grid() != &spec.grid || log.grid() != &spec.grid {
        return Err(Error::Shape("entrance, reservations and window use different slot grids".into()));
    }
    if entrance.channels() != log.channels() {
        return Err(Error::Shape(format!(
            "entrance gates {:?} differ from reservation gates {:?}",
            entrance.channels(),
            log.channels()
        )));
    }
    if spec.out_channels > 1 && spec.out_channels != entrance.num_channels() {
        return Err(Error::Shape(format!(
            "{} output channels requested for {} gates",
            spec.out_channels,
            entrance.num_channels()
        )));
    }
    Ok(())
}

/// Builds the per-issue-date inputs and targets from series and log.
pub struct SampleBuilder<'a> {
    entrance: &'a SlotSeries,
    index: ReservationIndex,
    spec: WindowSpec,
    groups: Vec<Vec<usize>>,
}

impl<'a> SampleBuilder<'a> {
    pub fn new(entrance: &'a SlotSeries, log: &ReservationLog, spec: &WindowSpec) -> Result<Self> {
        check_compatible(entrance, log, spec)?;
        Ok(SampleBuilder {
            entrance,
            index: ReservationIndex::new(log),
            spec: spec.clone(),
            groups: channel_groups(entrance.num_channels(), spec.out_channels),
        })
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    /// Model inputs for forecasting the `horizon_days` days after `issue_date`.
    /// Targets may lie beyond the entrance series.
    pub fn input(&self, issue_date: NaiveDate) -> Result<ForecastInput> {
        let t = self.spec.grid.slots_per_day;
        let spec = &self.spec;
        let enc_first = shift_date(issue_date, 1 - spec.input_days as i64)?;
        let (Some(first_day), Some(_)) = (self.entrance.day_index(enc_first), self.entrance.day_index(issue_date))
        else {
            return Err(Error::Window(format!(
                "issue date {issue_date} needs entrance history from {enc_first}, series covers {} to {}",
                self.entrance.start_date(),
                self.entrance.end_date()
            )));
        };

        let mut x_enc = Mat::zeros(spec.enc_len(), self.groups.len());
        for d in 0..spec.input_days {
            for s in 0..t {
                for (c, gates) in self.groups.iter().enumerate() {
                    let v = gates.iter().map(|&g| self.entrance.get(first_day + d, s, g)).sum();
                    x_enc.set(d * t + s, c, v);
                }
            }
        }

        let lags = &spec.res_feature_lags;
        let mut x_dec = Mat::zeros(spec.dec_len(), spec.res_channels());
        let mut last_booking: Option<NaiveDate> = None;
        for d in 0..spec.horizon_days {
            let target = shift_date(issue_date, d as i64 + 1)?;
            for s in 0..t {
                for (c, gates) in self.groups.iter().enumerate() {
                    for (l, &lag) in lags.iter().enumerate() {
                        let as_of = shift_date(issue_date, -(lag as i64))?;
                        let mut v = 0.0;
                        for &g in gates {
                            v += self.index.cumulative(target, s, g, as_of);
                            if let Some(b) = self.index.last_contributing_booking(target, s, g, as_of) {
                                last_booking = Some(last_booking.map_or(b, |x| x.max(b)));
                            }
                        }
                        x_dec.set(d * t + s, c * lags.len() + l, v);
                    }
                }
            }
        }

        Ok(ForecastInput {
            issue_date,
            horizon_days: spec.horizon_days,
            x_enc,
            x_enc_mark: mark_block(enc_first, spec.input_days, &spec.grid)?,
            x_dec,
            x_dec_mark: mark_block(shift_date(issue_date, 1)?, spec.horizon_days, &spec.grid)?,
            dec_last_booking: last_booking,
            enc_last_date: issue_date,
        })
    }

    /// Input plus target block; the horizon must lie inside the series.
    pub fn sample(&self, issue_date: NaiveDate) -> Result<ForecastSample> {
        let input = self.input(issue_date)?;
        let t = self.spec.grid.slots_per_day;
        let first = self
            .entrance
            .day_index(input.first_target())
            .zip(self.entrance.day_index(input.last_target()))
            .map(|(f, _)| f)
            .ok_or_else(|| Error::Window(format!("targets after {issue_date} leave the entrance series")))?;
        let mut y = Mat::zeros(self.spec.dec_len(), self.groups.len());
        for d in 0..self.spec.horizon_days {
            for s in 0..t {
                for (c, gates) in self.groups.iter().enumerate() {
                    y.set(d * t + s, c, gates.iter().map(|&g| self.entrance.get(first + d, s, g)).sum());
                }
            }
        }
        Ok(ForecastSample { input, y })
    }

    /// Issue dates with full encoder context and a complete horizon.
    pub fn issue_dates(&self) -> Vec<NaiveDate> {
        let n = self.entrance.num_days();
        let (din, dout) = (self.spec.input_days, self.spec.horizon_days);
        if n < din + dout {
            return Vec::new();
        }
        (din - 1..n - dout).map(|day| self.entrance.date_of(day)).collect()
    }
}

/// One sample per issue date, ordered chronologically.
pub fn build_samples(
    entrance: &SlotSeries,
    reservations: &ReservationLog,
    spec: &WindowSpec,
) -> Result<Vec<ForecastSample>> {
    let builder = SampleBuilder::new(entrance, reservations, spec)?;
    let need = spec.input_days + spec.horizon_days;
    if entrance.num_days() < need {
        return Err(Error::Window(format!(
            "{} days of entrance data, window needs at least {need}",
            entrance.num_days()
        )));
    }
    builder.issue_dates().into_iter().map(|d| builder.sample(d)).collect()
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<ForecastSample>,
    pub test: Vec<ForecastSample>,
    /// Train samples removed because their targets overlap the first test target window.
    pub purged: usize,
}

/// First `floor(n * train_fraction)` samples train, the rest test, then
/// train samples whose target windows reach the first test target window
/// are dropped.
pub fn chrono_split(samples: Vec<ForecastSample>, train_fraction: f64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    if samples.windows(2).any(|w| w[0].input.issue_date >= w[1].input.issue_date) {
        return Err(Error::Split("samples are not in chronological order".into()));
    }
    let n = samples.len();
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Split(format!("{n} samples at fraction {train_fraction} leave one side empty")));
    }
    let mut train = samples;
    let test = train.split_off(n_train);
    let first_test_target = test[0].input.first_target();
    let before = train.len();
    train.retain(|s| s.input.last_target() < first_test_target);
    let purged = before - train.len();
    if train.is_empty() {
        return Err(Error::Split("purging overlapping targets left no training samples".into()));
    }
    Ok(Split { train, test, purged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_attendance, generate_reservations, GeneratorConfig};

    fn data(days: usize) -> (SlotSeries, ReservationLog) {
        let cfg = GeneratorConfig {
            num_days: days,
            ..GeneratorConfig::default()
        };
        let att = generate_attendance(&cfg).unwrap();
        let log = generate_reservations(&att, &cfg).unwrap();
        (att, log)
    }

    fn spec(din: usize, dout: usize, cout: usize) -> WindowSpec {
        WindowSpec {
            input_days: din,
            horizon_days: dout,
            out_channels: cout,
            ..WindowSpec::default()
        }
    }

    #[test]
    fn sample_count_matches_closed_form() {
        let (att, log) = data(20);
        for (din, dout) in [(1, 1), (3, 5), (7, 5), (14, 1), (7, 13)] {
            let n = build_samples(&att, &log, &spec(din, dout, 2)).unwrap().len();
            // Count by brute force over all candidate issue days.
            let brute = (0..20).filter(|&i| i + 1 >= din && i + dout < 20).count();
            assert_eq!(n, brute);
            assert_eq!(n, 20 - din - dout + 1);
        }
    }

    #[test]
    fn exact_span_gives_one_sample_and_short_span_errors() {
        let (att, log) = data(12);
        assert_eq!(build_samples(&att, &log, &spec(7, 5, 1)).unwrap().len(), 1);
        assert!(matches!(build_samples(&att, &log, &spec(7, 6, 1)), Err(Error::Window(_))));
    }

    #[test]
    fn shapes_and_layout() {
        let (att, log) = data(15);
        let s = &build_samples(&att, &log, &spec(7, 5, 2)).unwrap()[0];
        assert_eq!(s.input.x_enc.shape(), (98, 2));
        assert_eq!(s.input.x_enc_mark.shape(), (98, 4));
        assert_eq!(s.input.x_dec.shape(), (70, 4));
        assert_eq!(s.input.x_dec_mark.shape(), (70, 4));
        assert_eq!(s.y.shape(), (70, 2));
        // Slot-major within day: row 15 is day 1 slot 1.
        assert_eq!(s.input.x_enc.get(15, 1), att.get(1, 1, 1));
        assert_eq!(s.y.get(14 * 4 + 13, 0), att.get(7 + 4, 13, 0));
        assert!(s.input.x_enc_mark.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));

        let total = &build_samples(&att, &log, &spec(7, 5, 1)).unwrap()[0];
        assert_eq!(total.y.get(3, 0), s.y.get(3, 0) + s.y.get(3, 1));
        assert_eq!(total.input.x_dec.get(10, 1), s.input.x_dec.get(10, 1) + s.input.x_dec.get(10, 3));
    }

    #[test]
    fn decoder_never_sees_future_bookings() {
        let (att, log) = data(30);
        for s in build_samples(&att, &log, &spec(5, 7, 2)).unwrap() {
            assert!(s.input.dec_last_booking.unwrap() <= s.input.issue_date);
            assert_eq!(s.input.enc_last_date, s.input.issue_date);
            let truncated = SampleBuilder::new(&att, &log.truncated(s.input.issue_date), &spec(5, 7, 2))
                .unwrap()
                .sample(s.input.issue_date)
                .unwrap();
            assert_eq!(truncated.input.x_dec, s.input.x_dec);
        }
    }

    #[test]
    fn prediction_input_may_extend_past_series() {
        let (att, log) = data(10);
        let b = SampleBuilder::new(&att, &log, &spec(7, 5, 2)).unwrap();
        let inp = b.input(att.end_date()).unwrap();
        assert_eq!(inp.x_dec.rows(), 70);
        assert!(b.sample(att.end_date()).is_err());
        assert!(matches!(b.input(att.date_of(2)), Err(Error::Window(_))));
    }

    fn dummy(n: usize, dout: usize) -> Vec<ForecastSample> {
        let (att, log) = data(n + dout);
        build_samples(&att, &log, &spec(1, dout, 1)).unwrap()
    }

    #[test]
    fn split_is_80_20_without_overlap() {
        let s = chrono_split(dummy(10, 1), 0.8).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.purged), (8, 2, 0));
    }

    #[test]
    fn split_purges_overlapping_targets() {
        let samples = dummy(10, 5);
        let first_test_start = samples[8].input.first_target();
        // Overlap oracle: a train sample overlaps when its window reaches the first test target.
        let expected = samples[..8]
            .iter()
            .filter(|s| s.input.last_target() >= first_test_start)
            .count();
        let s = chrono_split(samples, 0.8).unwrap();
        assert_eq!(expected, 4);
        assert_eq!(s.purged, expected);
        assert_eq!(s.train.len(), 4);
        assert_eq!(s.test.len(), 2);
        assert!(s.train.iter().all(|t| t.input.last_target() < first_test_start));
    }

    #[test]
    fn split_errors() {
        assert!(matches!(chrono_split(dummy(1, 1), 0.8), Err(Error::Split(_))));
        assert!(matches!(chrono_split(dummy(5, 1), 1.0), Err(Error::Split(_))));
        assert!(matches!(chrono_split(dummy(5, 1), 0.0), Err(Error::Split(_))));
    }
}
