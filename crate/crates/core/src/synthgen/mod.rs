//! Synthetic attendance and reservation data.
//!
//! Attendance has a weekly cycle, a linear trend, multiplicative day noise and
//! a calendar of shock days. Reservations are derived from attendance so that
//! cumulative bookings track attendance more tightly as lead time shrinks.

mod reservations;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

pub use reservations::{
    aggregate_reservations, generate_reservations, ReservationEvent, ReservationIndex, ReservationLog,
};

use crate::error::{Error, Result};
use crate::timegrid::{parse_date, SlotGrid, SlotSeries};

/// Largest expected daily count accepted from a configuration.
const MAX_EXPECTED_DAILY: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockKind {
    Rain,
    SpecialEvent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shock {
    pub date: NaiveDate,
    pub multiplier: f64,
    pub kind: ShockKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub start_date: NaiveDate,
    pub num_days: usize,
    pub gates: Vec<String>,
    /// Mean daily visitors per gate, same order as `gates`.
    pub base_daily_mean: Vec<f64>,
    pub weekend_multiplier: f64,
    pub trend_slope: f64,
    pub shock_calendar: Vec<Shock>,
    pub intraday_profile: Vec<f64>,
    pub reservation_rate: f64,
    pub reschedule_prob: f64,
    pub noshow_prob: f64,
    pub lead_time_mean_days: f64,
    /// Day-to-day coefficient of variation of the mean lead time.
    pub lead_time_day_cv: f64,
    pub noise_cv: f64,
    pub seed: u64,
    pub grid: SlotGrid,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let shock = |date: &str, multiplier, kind| Shock {
            date: parse_date(date).expect("default shock date"),
            multiplier,
            kind,
        };
        GeneratorConfig {
            start_date: parse_date("2025-04-23").expect("default start"),
            num_days: 148,
            gates: vec!["East".into(), "West".into()],
            base_daily_mean: vec![3000.0, 2000.0],
            weekend_multiplier: 1.4,
            trend_slope: 0.003,
            shock_calendar: vec![
                shock("2025-05-15", 0.7, ShockKind::Rain),
                shock("2025-06-10", 0.6, ShockKind::Rain),
                shock("2025-07-02", 0.7, ShockKind::Rain),
                shock("2025-07-12", 1.5, ShockKind::SpecialEvent),
                shock("2025-08-13", 0.65, ShockKind::Rain),
                shock("2025-08-23", 1.4, ShockKind::SpecialEvent),
            ],
            intraday_profile: vec![
                0.10, 0.16, 0.15, 0.12, 0.10, 0.08, 0.07, 0.06, 0.05, 0.04, 0.03, 0.02, 0.01, 0.01,
            ],
            reservation_rate: 0.9,
            reschedule_prob: 0.1,
            noshow_prob: 0.05,
            lead_time_mean_days: 6.0,
            lead_time_day_cv: 0.3,
            noise_cv: 0.08,
            seed: 3407,
            grid: SlotGrid::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.grid.validate()?;
        if self.num_days == 0 {
            return bad("num_days must be at least 1".into());
        }
        if self.gates.is_empty() || self.gates.len() != self.base_daily_mean.len() {
            return bad(format!(
                "{} gates but {} base_daily_mean entries",
                self.gates.len(),
                self.base_daily_mean.len()
            ));
        }
        if self.base_daily_mean.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return bad("base_daily_mean entries must be positive".into());
        }
        if !(self.weekend_multiplier > 0.0) {
            return bad("weekend_multiplier must be positive".into());
        }
        if self.intraday_profile.len() != self.grid.slots_per_day {
            return bad(format!(
                "intraday_profile has {} weights for {} slots",
                self.intraday_profile.len(),
                self.grid.slots_per_day
            ));
        }
        let total: f64 = self.intraday_profile.iter().sum();
        if self.intraday_profile.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return bad(format!("intraday_profile must be nonnegative and sum to 1 (sum {total})"));
        }
        if !(self.reservation_rate > 0.0 && self.reservation_rate <= 1.0) {
            return bad("reservation_rate must lie in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.reschedule_prob) {
            return bad("reschedule_prob must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.noshow_prob) {
            return bad("noshow_prob must lie in [0, 1)".into());
        }
        if !(self.lead_time_mean_days > 0.0) {
            return bad("lead_time_mean_days must be positive".into());
        }
        if !(self.noise_cv >= 0.0) || !(self.lead_time_day_cv >= 0.0) {
            return bad("coefficients of variation must be nonnegative".into());
        }
        if let Some(s) = self.shock_calendar.iter().find(|s| !(s.multiplier >= 0.0)) {
            return bad(format!("shock on {} has negative multiplier", s.date));
        }
        Ok(())
    }

    /// Product of shock multipliers on `date`, with the dominant kind.
    pub fn shock_on(&self, date: NaiveDate) -> (f64, Option<ShockKind>) {
        self.shock_calendar
            .iter()
            .filter(|s| s.date == date)
            .fold((1.0, None), |(m, kind), s| (m * s.multiplier, kind.or(Some(s.kind))))
    }
}

fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Mean-one lognormal with the given coefficient of variation.
pub(crate) fn mean_one_lognormal(cv: f64) -> Option<LogNormal<f64>> {
    if cv <= 0.0 {
        return None;
    }
    let sigma2 = (1.0 + cv * cv).ln();
    LogNormal::new(-sigma2 / 2.0, sigma2.sqrt()).ok()
}

/// Rounds up with probability equal to the fractional part; values within
/// 1e-9 of an integer are snapped.
fn stochastic_round(x: f64, rng: &mut impl Rng) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        return r;
    }
    let floor = x.floor();
    floor + f64::from(u8::from(rng.random::<f64>() < x - floor))
}

/// Ground-truth hourly entrance counts per gate.
pub fn generate_attendance(config: &GeneratorConfig) -> Result<SlotSeries> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = mean_one_lognormal(config.noise_cv);
    let mut series = SlotSeries::zeros(
        config.start_date,
        config.num_days,
        config.grid,
        config.gates.clone(),
    );
    for day in 0..config.num_days {
        let date = series.date_of(day);
        let weekend = if is_weekend(date) { config.weekend_multiplier } else { 1.0 };
        let trend = 1.0 + config.trend_slope * day as f64;
        let (shock, _) = config.shock_on(date);
        for (gate, &base) in config.base_daily_mean.iter().enumerate() {
            let factor = noise.as_ref().map_or(1.0, |n| n.sample(&mut rng));
            let expected = base * weekend * trend * shock * factor;
            if !expected.is_finite() || expected < 0.0 || expected > MAX_EXPECTED_DAILY {
                return Err(Error::Config(format!(
                    "expected count {expected} for {date} gate {} is out of range",
                    config.gates[gate]
                )));
            }
            for (slot, &w) in config.intraday_profile.iter().enumerate() {
                let count = stochastic_round(expected * w, &mut rng);
                series.set(day, slot, gate, count)?;
            }
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_config() -> GeneratorConfig {
        GeneratorConfig {
            num_days: 28,
            base_daily_mean: vec![1400.0, 700.0],
            weekend_multiplier: 1.0,
            trend_slope: 0.0,
            shock_calendar: vec![],
            intraday_profile: vec![1.0 / 14.0; 14],
            noise_cv: 0.0,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn constant_process_repeats_weekly() {
        let s = generate_attendance(&flat_config()).unwrap();
        for day in 7..s.num_days() {
            assert_eq!(s.daily_total(day), s.daily_total(day - 7));
        }
        assert_eq!(s.daily_channel_total(0, 0), 1400.0);
    }

    #[test]
    fn weekend_ratio_is_exact_without_noise() {
        let cfg = GeneratorConfig {
            weekend_multiplier: 1.5,
            ..flat_config()
        };
        let s = generate_attendance(&cfg).unwrap();
        let wed = (0..7).find(|&d| s.date_of(d).weekday() == Weekday::Wed).unwrap();
        let sat = (0..7).find(|&d| s.date_of(d).weekday() == Weekday::Sat).unwrap();
        assert_eq!(s.daily_total(sat) / s.daily_total(wed), 1.5);
    }

    #[test]
    fn same_seed_same_series() {
        let cfg = GeneratorConfig::default();
        let a = generate_attendance(&cfg).unwrap();
        let b = generate_attendance(&cfg).unwrap();
        assert_eq!(a.values(), b.values());
        let other = generate_attendance(&GeneratorConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.values(), other.values());
    }

    #[test]
    fn shock_scales_expected_count() {
        let mut cfg = flat_config();
        let date = cfg.start_date;
        cfg.shock_calendar = vec![Shock {
            date,
            multiplier: 0.5,
            kind: ShockKind::Rain,
        }];
        let s = generate_attendance(&cfg).unwrap();
        assert_eq!(s.daily_total(0), 0.5 * s.daily_total(7));
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            GeneratorConfig { num_days: 0, ..flat_config() },
            GeneratorConfig { intraday_profile: vec![0.5; 14], ..flat_config() },
            GeneratorConfig { reschedule_prob: 1.0, ..flat_config() },
            GeneratorConfig { reservation_rate: 0.0, ..flat_config() },
            GeneratorConfig { trend_slope: -1.0, ..flat_config() },
            GeneratorConfig { base_daily_mean: vec![1.0], ..flat_config() },
        ];
        for cfg in cases {
            assert!(matches!(generate_attendance(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn stochastic_rounding_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20_000;
        let mean = (0..n).map(|_| stochastic_round(2.3, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 2.3).abs() < 0.02, "{mean}");
    }
}
