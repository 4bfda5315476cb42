//! `entrance.csv` and `reservations.csv` readers and writers.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::synthgen::{ReservationEvent, ReservationLog};
use crate::timegrid::{days_between, parse_date, SlotGrid, SlotSeries};

pub const ENTRANCE_HEADER: [&str; 4] = ["date", "slot", "gate", "count"];
pub const RESERVATION_HEADER: [&str; 5] = ["booking_date", "target_date", "slot", "gate", "delta"];

/// Grid, gate labels and optionally the declared day span of a file.
#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub grid: SlotGrid,
    pub gates: Vec<String>,
    /// `(start_date, num_days)`; inferred from the rows when absent.
    pub span: Option<(NaiveDate, usize)>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            grid: SlotGrid::default(),
            gates: vec!["East".into(), "West".into()],
            span: None,
        }
    }
}

struct Rows {
    reader: csv::Reader<File>,
    path: std::path::PathBuf,
}

impl Rows {
    fn open(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
        let parse_err = |line, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let found = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
        if found.iter().ne(header.iter().copied()) {
            return Err(parse_err(
                1,
                format!("expected header {:?}, found {:?}", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
            ));
        }
        Ok(Rows {
            reader,
            path: path.to_path_buf(),
        })
    }

    fn parse_err(&self, line: u64, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    /// Next record with its 1-based line number.
    fn next_record(&mut self, width: usize) -> Option<Result<(u64, csv::StringRecord)>> {
        let mut record = csv::StringRecord::new();
        match self.reader.read_record(&mut record) {
            Ok(false) => None,
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line());
                if record.len() != width {
                    return Some(Err(self.parse_err(line, format!("expected {width} fields, found {}", record.len()))));
                }
                Some(Ok((line, record)))
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                Some(Err(self.parse_err(line, e.to_string())))
            }
        }
    }

    fn date(&self, line: u64, field: &str) -> Result<NaiveDate> {
        parse_date(field).map_err(|e| self.parse_err(line, e.to_string()))
    }

    fn slot(&self, line: u64, field: &str, grid: &SlotGrid) -> Result<usize> {
        let slot: usize = field
            .trim()
            .parse()
            .map_err(|_| self.parse_err(line, format!("slot {field:?} is not an integer")))?;
        grid.check_slot(slot).map_err(|e| self.parse_err(line, e.to_string()))?;
        Ok(slot)
    }

    fn gate(&self, line: u64, field: &str, gates: &[String]) -> Result<usize> {
        gates
            .iter()
            .position(|g| g == field.trim())
            .ok_or_else(|| self.parse_err(line, format!("unknown gate {field:?}")))
    }

    fn int(&self, line: u64, field: &str, name: &str) -> Result<i64> {
        field
            .trim()
            .parse()
            .map_err(|_| self.parse_err(line, format!("{name} {field:?} is not an integer")))
    }
}

fn resolve_span(
    declared: Option<(NaiveDate, usize)>,
    dates: impl Iterator<Item = NaiveDate>,
    path: &Path,
) -> Result<(NaiveDate, usize)> {
    if let Some(span) = declared {
        return Ok(span);
    }
    let (mut lo, mut hi) = (None::<NaiveDate>, None::<NaiveDate>);
    for d in dates {
        lo = Some(lo.map_or(d, |l| l.min(d)));
        hi = Some(hi.map_or(d, |h| h.max(d)));
    }
    match (lo, hi) {
        (Some(lo), Some(hi)) => Ok((lo, days_between(lo, hi) as usize + 1)),
        _ => Err(Error::Validation(format!(
            "{}: no rows and no declared span",
            path.display()
        ))),
    }
}

/// Dense entrance counts; absent `(date, slot, gate)` rows are zero.
pub fn load_entrance_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<SlotSeries> {
    let path = path.as_ref();
    let mut rows = Rows::open(path, &ENTRANCE_HEADER)?;
    let mut parsed = Vec::new();
    let mut seen = HashSet::new();
    while let Some(rec) = rows.next_record(ENTRANCE_HEADER.len()) {
        let (line, r) = rec?;
        let date = rows.date(line, &r[0])?;
        let slot = rows.slot(line, &r[1], &opts.grid)?;
        let gate = rows.gate(line, &r[2], &opts.gates)?;
        let count = rows.int(line, &r[3], "count")?;
        if count < 0 {
            return Err(Error::Validation(format!(
                "{}:{line}: negative count {count}",
                path.display()
            )));
        }
        if !seen.insert((date, slot, gate)) {
            return Err(Error::Duplicate {
                path: path.to_path_buf(),
                line,
                key: format!("{date},{slot},{}", opts.gates[gate]),
            });
        }
        parsed.push((line, date, slot, gate, count));
    }
    let (start, num_days) = resolve_span(opts.span, parsed.iter().map(|p| p.1), path)?;
    let mut series = SlotSeries::zeros(start, num_days, opts.grid, opts.gates.clone());
    for (line, date, slot, gate, count) in parsed {
        let day = series.day_index(date).ok_or_else(|| {
            Error::Validation(format!("{}:{line}: date {date} outside declared span", path.display()))
        })?;
        series.set(day, slot, gate, count as f64)?;
    }
    Ok(series)
}

/// Reservation updates. The target span defaults to the range of target dates.
pub fn load_reservations_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<ReservationLog> {
    let path = path.as_ref();
    let mut rows = Rows::open(path, &RESERVATION_HEADER)?;
    let mut events = Vec::new();
    while let Some(rec) = rows.next_record(RESERVATION_HEADER.len()) {
        let (line, r) = rec?;
        events.push(ReservationEvent {
            booking_date: rows.date(line, &r[0])?,
            target_date: rows.date(line, &r[1])?,
            slot: rows.slot(line, &r[2], &opts.grid)?,
            gate: rows.gate(line, &r[3], &opts.gates)?,
            delta: rows.int(line, &r[4], "delta")?,
        });
    }
    let (start, num_days) = resolve_span(opts.span, events.iter().map(|e| e.target_date), path)?;
    ReservationLog::new(start, num_days, opts.grid, opts.gates.clone(), events)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_entrance_csv(series: &SlotSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", ENTRANCE_HEADER.join(",")).map_err(io)?;
    for day in 0..series.num_days() {
        let date = series.date_of(day);
        for slot in 0..series.grid().slots_per_day {
            for (c, gate) in series.channels().iter().enumerate() {
                writeln!(w, "{date},{slot},{gate},{}", series.get(day, slot, c).round() as i64).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn write_reservations_csv(log: &ReservationLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", RESERVATION_HEADER.join(",")).map_err(io)?;
    for e in log.events() {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.booking_date,
            e.target_date,
            e.slot,
            log.channels()[e.gate],
            e.delta
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn empty_body_with_declared_span_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.csv", "date,slot,gate,count\n");
        let opts = CsvOptions {
            span: Some((parse_date("2025-04-23").unwrap(), 1)),
            ..CsvOptions::default()
        };
        let s = load_entrance_csv(&p, &opts).unwrap();
        assert_eq!(s.num_days(), 1);
        assert_eq!(s.values().len(), 14 * 2);
        assert!(s.values().iter().all(|&v| v == 0.0));
        assert!(load_entrance_csv(&p, &CsvOptions::default()).is_err());
    }

    #[test]
    fn one_day_sums_to_105() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("date,slot,gate,count\n");
        for s in 0..14 {
            body.push_str(&format!("2025-04-23,{s},East,{}\n", s + 1));
        }
        let s = load_entrance_csv(write(&dir, "e.csv", &body), &CsvOptions::default()).unwrap();
        assert_eq!(s.daily_total(0), 105.0);
    }

    #[test]
    fn row_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.csv", "date,slot,gate,count\n2025-04-23,0,East,1\n2025-04-23,14,East,5\n");
        match load_entrance_csv(&p, &CsvOptions::default()) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("14"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let p = write(&dir, "d.csv", "date,slot,gate,count\n2025-04-23,0,East,1\n2025-04-23,0,East,2\n");
        assert!(matches!(load_entrance_csv(&p, &CsvOptions::default()), Err(Error::Duplicate { line: 3, .. })));
        let p = write(&dir, "n.csv", "date,slot,gate,count\n2025-04-23,0,East,-2\n");
        assert!(matches!(load_entrance_csv(&p, &CsvOptions::default()), Err(Error::Validation(_))));
        let p = write(&dir, "b.csv", "date,slot,gate,count\n2025-13-01,0,East,2\n");
        assert!(matches!(load_entrance_csv(&p, &CsvOptions::default()), Err(Error::Parse { line: 2, .. })));
        let p = write(&dir, "h.csv", "day,slot,gate,count\n");
        assert!(matches!(load_entrance_csv(&p, &CsvOptions::default()), Err(Error::Parse { line: 1, .. })));
        let p = write(&dir, "g.csv", "date,slot,gate,count\n2025-04-23,0,North,2\n");
        assert!(load_entrance_csv(&p, &CsvOptions::default()).is_err());
    }

    #[test]
    fn reservation_rows_validate_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "r.csv",
            "booking_date,target_date,slot,gate,delta\n2025-04-20,2025-04-23,3,West,4\n2025-04-21,2025-04-23,3,West,-2\n",
        );
        let log = load_reservations_csv(&p, &CsvOptions::default()).unwrap();
        assert_eq!(log.events().len(), 2);
        assert_eq!(log.num_days(), 1);
        let p = write(&dir, "bad.csv", "booking_date,target_date,slot,gate,delta\n2025-04-21,2025-04-23,3,West,-2\n");
        assert!(matches!(load_reservations_csv(&p, &CsvOptions::default()), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let r = load_entrance_csv("/nonexistent/entrance.csv", &CsvOptions::default());
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
