//! Day/slot time grid, calendar marks, and the count-series container.

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of calendar fields in a [`CalendarMark`].
pub const MARK_DIM: usize = 4;

/// Hourly admission slots of one operating day.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotGrid {
    pub slots_per_day: usize,
    pub first_hour: u32,
    pub last_hour_exclusive: u32,
}

impl Default for SlotGrid {
    /// 14 one-hour slots, 08:00 to 22:00.
    fn default() -> Self {
        SlotGrid {
            slots_per_day: 14,
            first_hour: 8,
            last_hour_exclusive: 22,
        }
    }
}

impl SlotGrid {
    pub fn new(first_hour: u32, last_hour_exclusive: u32) -> Result<Self> {
        let grid = SlotGrid {
            slots_per_day: last_hour_exclusive.saturating_sub(first_hour) as usize,
            first_hour,
            last_hour_exclusive,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots_per_day < 1 {
            return Err(Error::Config("slot grid needs at least one slot".into()));
        }
        if self.last_hour_exclusive > 24
            || self.last_hour_exclusive < self.first_hour
            || (self.last_hour_exclusive - self.first_hour) as usize != self.slots_per_day
        {
            return Err(Error::Config(format!(
                "slot grid hours [{}, {}) do not span {} slots",
                self.first_hour, self.last_hour_exclusive, self.slots_per_day
            )));
        }
        Ok(())
    }

    /// Slot index of a clock hour.
    pub fn slot_of_hour(&self, hour: u32) -> Result<usize> {
        if hour < self.first_hour || hour >= self.last_hour_exclusive {
            return Err(Error::HourRange {
                hour,
                first: self.first_hour,
                last_exclusive: self.last_hour_exclusive,
            });
        }
        Ok((hour - self.first_hour) as usize)
    }

    /// Starting clock hour of a slot.
    pub fn hour_of_slot(&self, slot: usize) -> Result<u32> {
        self.check_slot(slot)?;
        Ok(self.first_hour + slot as u32)
    }

    pub fn check_slot(&self, slot: usize) -> Result<()> {
        if slot >= self.slots_per_day {
            return Err(Error::SlotRange {
                slot,
                slots_per_day: self.slots_per_day,
            });
        }
        Ok(())
    }
}

/// Normalized calendar fields of one time step, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalendarMark {
    pub hour_norm: f64,
    pub weekday_norm: f64,
    pub month_norm: f64,
    pub day_norm: f64,
}

impl CalendarMark {
    pub fn to_array(self) -> [f64; MARK_DIM] {
        [self.hour_norm, self.weekday_norm, self.month_norm, self.day_norm]
    }
}

/// Calendar mark of `slot` on `date`.
///
/// Hour is divided by the last slot index (13 on the default grid), weekday
/// (Monday = 0) by 6, month number (January = 1) by 12, day of month by 32.
pub fn build_mark(date: NaiveDate, slot: usize, grid: &SlotGrid) -> Result<CalendarMark> {
    grid.check_slot(slot)?;
    let hour_div = (grid.slots_per_day.max(2) - 1) as f64;
    Ok(CalendarMark {
        hour_norm: slot as f64 / hour_div,
        weekday_norm: date.weekday().num_days_from_monday() as f64 / 6.0,
        month_norm: date.month() as f64 / 12.0,
        day_norm: date.day() as f64 / 32.0,
    })
}

/// Checked `date + days`, with negative offsets allowed.
pub fn shift_date(date: NaiveDate, days: i64) -> Result<NaiveDate> {
    let shifted = if days >= 0 {
        date.checked_add_days(Days::new(days as u64))
    } else {
        date.checked_sub_days(Days::new(days.unsigned_abs()))
    };
    shifted.ok_or_else(|| Error::Date(format!("{date} shifted by {days} days")))
}

pub fn days_between(from: NaiveDate, to: NaiveDate) -> i64 {
    (to - from).num_days()
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::Date(format!("{s:?}: {e}")))
}

/// Dense per-(day, slot, channel) count grid.
///
/// Values are stored day-major, then slot, then channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotSeries {
    start_date: NaiveDate,
    num_days: usize,
    grid: SlotGrid,
    channels: Vec<String>,
    values: Vec<f64>,
}

impl SlotSeries {
    pub fn zeros(start_date: NaiveDate, num_days: usize, grid: SlotGrid, channels: Vec<String>) -> Self {
        let len = num_days * grid.slots_per_day * channels.len();
        SlotSeries {
            start_date,
            num_days,
            grid,
            channels,
            values: vec![0.0; len],
        }
    }

    pub fn from_values(
        start_date: NaiveDate,
        num_days: usize,
        grid: SlotGrid,
        channels: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = num_days * grid.slots_per_day * channels.len();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "series of {num_days} days x {} slots x {} channels needs {expected} values, got {}",
                grid.slots_per_day,
                channels.len(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Validation(format!("series value {bad} is negative or non-finite")));
        }
        Ok(SlotSeries {
            start_date,
            num_days,
            grid,
            channels,
            values,
        })
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn num_days(&self) -> usize {
        self.num_days
    }

    pub fn end_date(&self) -> NaiveDate {
        shift_date(self.start_date, self.num_days as i64 - 1).expect("series end date")
    }

    pub fn grid(&self) -> &SlotGrid {
        &self.grid
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        shift_date(self.start_date, day as i64).expect("series date")
    }

    /// Day index of `date`, if it lies inside the series.
    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let d = days_between(self.start_date, date);
        (d >= 0 && (d as usize) < self.num_days).then_some(d as usize)
    }

    fn offset(&self, day: usize, slot: usize, channel: usize) -> usize {
        (day * self.grid.slots_per_day + slot) * self.channels.len() + channel
    }

    pub fn get(&self, day: usize, slot: usize, channel: usize) -> f64 {
        self.values[self.offset(day, slot, channel)]
    }

    /// Sets one cell; rejects negative or non-finite counts.
    pub fn set(&mut self, day: usize, slot: usize, channel: usize, value: f64) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Validation(format!("count {value} is negative or non-finite")));
        }
        let o = self.offset(day, slot, channel);
        self.values[o] = value;
        Ok(())
    }

    pub(crate) fn add_unchecked(&mut self, day: usize, slot: usize, channel: usize, value: f64) {
        let o = self.offset(day, slot, channel);
        self.values[o] += value;
    }

    /// Sum over slots and channels for one day.
    pub fn daily_total(&self, day: usize) -> f64 {
        let t = self.grid.slots_per_day * self.channels.len();
        self.values[day * t..(day + 1) * t].iter().sum()
    }

    pub fn daily_channel_total(&self, day: usize, channel: usize) -> f64 {
        (0..self.grid.slots_per_day).map(|s| self.get(day, s, channel)).sum()
    }

    pub fn daily_totals(&self) -> Vec<f64> {
        (0..self.num_days).map(|d| self.daily_total(d)).collect()
    }

    /// Single-channel series summing every channel.
    pub fn total(&self) -> SlotSeries {
        let c = self.channels.len();
        let values = self.values.chunks(c).map(|ch| ch.iter().sum()).collect();
        SlotSeries {
            start_date: self.start_date,
            num_days: self.num_days,
            grid: self.grid,
            channels: vec!["Total".to_string()],
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    #[test]
    fn slot_of_hour_bounds() {
        let g = SlotGrid::default();
        assert_eq!(g.slot_of_hour(8).unwrap(), 0);
        assert_eq!(g.slot_of_hour(21).unwrap(), 13);
        let err = g.slot_of_hour(22).unwrap_err();
        assert!(err.to_string().contains("22"), "{err}");
        assert!(g.slot_of_hour(7).is_err());
    }

    #[test]
    fn slot_hour_round_trip() {
        let g = SlotGrid::default();
        for h in g.first_hour..g.last_hour_exclusive {
            assert_eq!(g.hour_of_slot(g.slot_of_hour(h).unwrap()).unwrap(), h);
        }
    }

    #[test]
    fn grid_invariants() {
        assert!(SlotGrid::new(8, 22).is_ok());
        assert!(SlotGrid::new(8, 8).is_err());
        let bad = SlotGrid {
            slots_per_day: 13,
            first_hour: 8,
            last_hour_exclusive: 22,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mark_at_first_slot_has_zero_hour() {
        let m = build_mark(d("2025-07-01"), 0, &SlotGrid::default()).unwrap();
        assert_eq!(m.hour_norm, 0.0);
    }

    #[test]
    fn mark_of_expo_opening_day() {
        // 2025-04-23 is a Wednesday.
        assert_eq!(d("2025-04-23").weekday(), chrono::Weekday::Wed);
        let m = build_mark(d("2025-04-23"), 13, &SlotGrid::default()).unwrap();
        assert_eq!(m.to_array(), [1.0, 2.0 / 6.0, 4.0 / 12.0, 23.0 / 32.0]);
    }

    #[test]
    fn mark_on_leap_day() {
        let m = build_mark(d("2024-02-29"), 7, &SlotGrid::default()).unwrap();
        assert_eq!(m.day_norm, 29.0 / 32.0);
        assert_eq!(m.month_norm, 2.0 / 12.0);
        assert_eq!(m.hour_norm, 7.0 / 13.0);
        assert!(parse_date("2025-02-29").is_err());
    }

    #[test]
    fn mark_rejects_bad_slot() {
        assert!(build_mark(d("2025-05-01"), 14, &SlotGrid::default()).is_err());
    }

    #[test]
    fn marks_stay_in_unit_interval_over_a_year() {
        let g = SlotGrid::default();
        let mut date = d("2024-01-01");
        for _ in 0..366 {
            for s in 0..g.slots_per_day {
                let m = build_mark(date, s, &g).unwrap();
                assert!(m.to_array().iter().all(|v| (0.0..=1.0).contains(v)), "{date} {s}");
                assert_eq!(m, build_mark(date, s, &g).unwrap());
            }
            date = shift_date(date, 1).unwrap();
        }
    }

    #[test]
    fn series_totals() {
        let g = SlotGrid::default();
        let mut s = SlotSeries::zeros(d("2025-05-01"), 2, g, vec!["East".into(), "West".into()]);
        s.set(1, 3, 0, 5.0).unwrap();
        s.set(1, 4, 1, 7.0).unwrap();
        assert!(s.set(0, 0, 0, -1.0).is_err());
        assert_eq!(s.daily_total(1), 12.0);
        assert_eq!(s.daily_channel_total(1, 1), 7.0);
        let t = s.total();
        assert_eq!(t.channels(), ["Total".to_string()]);
        assert_eq!(t.get(1, 4, 0), 7.0);
        assert_eq!(s.day_index(d("2025-05-02")), Some(1));
        assert_eq!(s.day_index(d("2025-05-03")), None);
        assert_eq!(s.end_date(), d("2025-05-02"));
    }
}
