use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use super::{mean_one_lognormal, GeneratorConfig, ShockKind};
use crate::error::{Error, Result};
use crate::timegrid::{days_between, shift_date, SlotGrid, SlotSeries};

/// Lead time (days) at which special events are announced and bookings surge.
const EVENT_ANNOUNCE_LEAD: i64 = 14;
/// Share of a special event's reservers who book on the announcement day.
const EVENT_SURGE_SHARE: f64 = 0.5;
/// Leads beyond this are folded into the last bucket.
const MAX_LEAD: i64 = 120;
/// Reschedules move a booking by at most this many days.
const MAX_RESCHEDULE_SHIFT: i64 = 3;

/// One (possibly coalesced) reservation update.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReservationEvent {
    pub booking_date: NaiveDate,
    pub target_date: NaiveDate,
    pub slot: usize,
    /// Index into [`ReservationLog::channels`].
    pub gate: usize,
    pub delta: i64,
}

/// Time-ordered stream of booking updates for a span of target dates.
#[derive(Clone, Debug, PartialEq)]
pub struct ReservationLog {
    start_date: NaiveDate,
    num_days: usize,
    grid: SlotGrid,
    channels: Vec<String>,
    events: Vec<ReservationEvent>,
}

impl ReservationLog {
    /// Builds a log, checking slots, gates and that every cumulative
    /// per-(target, slot, gate) count stays nonnegative.
    pub fn new(
        start_date: NaiveDate,
        num_days: usize,
        grid: SlotGrid,
        channels: Vec<String>,
        mut events: Vec<ReservationEvent>,
    ) -> Result<Self> {
        for e in &events {
            grid.check_slot(e.slot)?;
            if e.gate >= channels.len() {
                return Err(Error::Validation(format!("gate index {} out of range", e.gate)));
            }
        }
        events.sort_by(|a, b| {
            (a.booking_date, a.target_date, a.slot, a.gate, a.delta < 0).cmp(&(
                b.booking_date,
                b.target_date,
                b.slot,
                b.gate,
                b.delta < 0,
            ))
        });
        let log = ReservationLog {
            start_date,
            num_days,
            grid,
            channels,
            events,
        };
        log.check_prefix_nonnegative()?;
        Ok(log)
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn num_days(&self) -> usize {
        self.num_days
    }

    pub fn grid(&self) -> &SlotGrid {
        &self.grid
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    /// Events sorted by booking date; within a date, increments precede
    /// decrements.
    pub fn events(&self) -> &[ReservationEvent] {
        &self.events
    }

    pub fn first_booking(&self) -> Option<NaiveDate> {
        self.events.first().map(|e| e.booking_date)
    }

    pub fn last_booking(&self) -> Option<NaiveDate> {
        self.events.last().map(|e| e.booking_date)
    }

    /// Running sums over booking time never drop below zero.
    pub fn check_prefix_nonnegative(&self) -> Result<()> {
        let mut running: HashMap<(NaiveDate, usize, usize), i64> = HashMap::new();
        for e in &self.events {
            let r = running.entry((e.target_date, e.slot, e.gate)).or_default();
            *r += e.delta;
            if *r < 0 {
                return Err(Error::Validation(format!(
                    "cumulative reservations for {} slot {} gate {} drop to {} on {}",
                    e.target_date, e.slot, self.channels[e.gate], r, e.booking_date
                )));
            }
        }
        Ok(())
    }

    /// Copy keeping only events booked on or before `as_of`.
    pub fn truncated(&self, as_of: NaiveDate) -> ReservationLog {
        ReservationLog {
            events: self
                .events
                .iter()
                .filter(|e| e.booking_date <= as_of)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }
}

/// Cumulative reservation counts per (target date, slot, gate), queryable at
/// any snapshot date.
#[derive(Clone, Debug)]
pub struct ReservationIndex {
    cells: HashMap<(NaiveDate, usize, usize), Vec<(NaiveDate, f64)>>,
}

impl ReservationIndex {
    pub fn new(log: &ReservationLog) -> Self {
        let mut cells: HashMap<(NaiveDate, usize, usize), Vec<(NaiveDate, f64)>> = HashMap::new();
        for e in log.events() {
            let cell = cells.entry((e.target_date, e.slot, e.gate)).or_default();
            let prev = cell.last().map_or(0.0, |&(_, c)| c);
            match cell.last_mut() {
                Some(last) if last.0 == e.booking_date => last.1 = prev + e.delta as f64,
                _ => cell.push((e.booking_date, prev + e.delta as f64)),
            }
        }
        ReservationIndex { cells }
    }

    /// Reservations for the cell as known at the end of `as_of`.
    pub fn cumulative(&self, target: NaiveDate, slot: usize, gate: usize, as_of: NaiveDate) -> f64 {
        self.cells.get(&(target, slot, gate)).map_or(0.0, |cell| {
            let n = cell.partition_point(|&(b, _)| b <= as_of);
            if n == 0 {
                0.0
            } else {
                cell[n - 1].1
            }
        })
    }

    /// Latest booking date that contributes to [`Self::cumulative`].
    pub fn last_contributing_booking(
        &self,
        target: NaiveDate,
        slot: usize,
        gate: usize,
        as_of: NaiveDate,
    ) -> Option<NaiveDate> {
        let cell = self.cells.get(&(target, slot, gate))?;
        let n = cell.partition_point(|&(b, _)| b <= as_of);
        (n > 0).then(|| cell[n - 1].0)
    }
}

/// Cumulative reservations per (target date, slot, gate) over the log's
/// target span, using only events booked on or before `as_of`.
pub fn aggregate_reservations(log: &ReservationLog, as_of: NaiveDate) -> SlotSeries {
    let mut out = SlotSeries::zeros(log.start_date, log.num_days, log.grid, log.channels.clone());
    for e in log.events.iter().filter(|e| e.booking_date <= as_of) {
        if let Some(day) = out.day_index(e.target_date) {
            out.add_unchecked(day, e.slot, e.gate, e.delta as f64);
        }
    }
    out
}

/// Accumulates coalesced deltas keyed by (booking, target, slot, gate, is_decrement).
#[derive(Default)]
struct EventSink {
    deltas: BTreeMap<(NaiveDate, NaiveDate, usize, usize, bool), i64>,
}

impl EventSink {
    fn push(&mut self, booking: NaiveDate, target: NaiveDate, slot: usize, gate: usize, delta: i64) {
        if delta != 0 {
            *self.deltas.entry((booking, target, slot, gate, delta < 0)).or_default() += delta;
        }
    }

    fn into_events(self) -> Vec<ReservationEvent> {
        self.deltas
            .into_iter()
            .map(|((booking_date, target_date, slot, gate, _), delta)| ReservationEvent {
                booking_date,
                target_date,
                slot,
                gate,
                delta,
            })
            .collect()
    }
}

fn binomial(n: u64, p: f64, rng: &mut impl Rng) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("binomial parameters").sample(rng)
}

fn poisson(lambda: f64, rng: &mut impl Rng) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("poisson rate").sample(rng) as u64
}

/// Splits `n` bookings over lead times `min_lead, min_lead + 1, ...` with a
/// geometric law of success probability `p`, calling `emit(lead, count)`.
fn spread_geometric(n: u64, p: f64, min_lead: i64, rng: &mut impl Rng, mut emit: impl FnMut(i64, u64)) {
    let mut remaining = n;
    let mut lead = min_lead;
    while remaining > 0 {
        let count = if lead >= MAX_LEAD { remaining } else { binomial(remaining, p, rng) };
        if count > 0 {
            emit(lead, count);
        }
        remaining -= count;
        lead += 1;
    }
}

/// Booking updates whose aggregates approach `attendance` as lead time
/// shrinks.
///
/// Each attendee reserves with probability `reservation_rate` at a geometric
/// lead time. A share of bookings are rescheduled from a nearby date, no-show
/// bookings inflate counts, special-event days get a surge of early bookings
/// and rain days receive cancellations in the final two days.
pub fn generate_reservations(attendance: &SlotSeries, config: &GeneratorConfig) -> Result<ReservationLog> {
    config.validate()?;
    if attendance.grid() != &config.grid
        || attendance.channels() != config.gates.as_slice()
        || attendance.start_date() != config.start_date
        || attendance.num_days() != config.num_days
    {
        return Err(Error::Shape(
            "attendance series does not match the generator grid, gates or span".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let day_lead = mean_one_lognormal(config.lead_time_day_cv);
    let first = attendance.start_date();
    let last = attendance.end_date();
    let mut sink = EventSink::default();

    for day in 0..attendance.num_days() {
        let target = attendance.date_of(day);
        let (multiplier, kind) = config.shock_on(target);
        let lead_mean = config.lead_time_mean_days * day_lead.as_ref().map_or(1.0, |d| d.sample(&mut rng));
        let p = 1.0 / (1.0 + lead_mean);
        let at_lead = |lead: i64| shift_date(target, -lead);

        for slot in 0..attendance.grid().slots_per_day {
            for gate in 0..attendance.num_channels() {
                let visitors = attendance.get(day, slot, gate).round() as u64;
                let reservers = binomial(visitors, config.reservation_rate, &mut rng);

                let mut regular = reservers;
                if kind == Some(ShockKind::SpecialEvent) {
                    let surge = binomial(reservers, EVENT_SURGE_SHARE, &mut rng);
                    sink.push(at_lead(EVENT_ANNOUNCE_LEAD)?, target, slot, gate, surge as i64);
                    regular -= surge;
                }

                let mut moves = Vec::new();
                spread_geometric(regular, p, 0, &mut rng, |lead, count| moves.push((lead, count)));
                for (lead, count) in moves {
                    let booked = at_lead(lead)?;
                    let rescheduled = if lead >= 1 {
                        binomial(count, config.reschedule_prob, &mut rng)
                    } else {
                        0
                    };
                    let mut direct = count - rescheduled;
                    for _ in 0..rescheduled {
                        let mut shift = rng.random_range(1..=MAX_RESCHEDULE_SHIFT);
                        if rng.random::<bool>() {
                            shift = -shift;
                        }
                        let original = shift_date(target, shift)?;
                        let latest = original.min(target);
                        if original < first || original > last || days_between(booked, latest) < 1 {
                            direct += 1;
                            continue;
                        }
                        let moved_on = shift_date(booked, rng.random_range(1..=days_between(booked, latest)))?;
                        sink.push(booked, original, slot, gate, 1);
                        sink.push(moved_on, original, slot, gate, -1);
                        sink.push(moved_on, target, slot, gate, 1);
                    }
                    sink.push(booked, target, slot, gate, direct as i64);
                }

                if config.noshow_prob > 0.0 {
                    let ratio = config.noshow_prob / (1.0 - config.noshow_prob);
                    let noshows = poisson(reservers as f64 * ratio, &mut rng);
                    let mut emits = Vec::new();
                    spread_geometric(noshows, p, 0, &mut rng, |lead, c| emits.push((lead, c)));
                    for (lead, count) in emits {
                        sink.push(at_lead(lead)?, target, slot, gate, count as i64);
                    }
                }

                if kind == Some(ShockKind::Rain) && multiplier > 0.0 && multiplier < 1.0 {
                    let cancelled = poisson(reservers as f64 * (1.0 / multiplier - 1.0), &mut rng);
                    let mut emits = Vec::new();
                    spread_geometric(cancelled, p, 2, &mut rng, |lead, c| emits.push((lead, c)));
                    for (lead, count) in emits {
                        sink.push(at_lead(lead)?, target, slot, gate, count as i64);
                    }
                    let same_day = binomial(cancelled, 0.5, &mut rng);
                    sink.push(target, target, slot, gate, -(same_day as i64));
                    sink.push(at_lead(1)?, target, slot, gate, -((cancelled - same_day) as i64));
                }
            }
        }
    }

    ReservationLog::new(
        attendance.start_date(),
        attendance.num_days(),
        config.grid,
        config.gates.clone(),
        sink.into_events(),
    )
}
