//! Readers for the region-level `cases.csv` and `flights.csv` files.
//!
//! Both files use ISO dates, a mandatory header and the convention that a
//! value of `-1` or an empty cell means "missing". Any other negative value is
//! erroneous. Missing and erroneous values flag the whole day for deletion.

use std::collections::HashSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::region::{Region, NUM_REGIONS};
use super::DataError;

/// Inclusive range of calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateSpan {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl DateSpan {
    pub fn new(first: NaiveDate, last: NaiveDate) -> Self {
        Self { first, last }
    }

    pub fn days(&self) -> usize {
        ((self.last - self.first).num_days() + 1).max(0) as usize
    }

    pub fn date(&self, offset: usize) -> NaiveDate {
        self.first + chrono::Duration::days(offset as i64)
    }

    pub fn offset(&self, date: NaiveDate) -> Option<usize> {
        (date >= self.first && date <= self.last).then(|| (date - self.first).num_days() as usize)
    }

    pub fn intersect(&self, other: &DateSpan) -> Option<DateSpan> {
        let first = self.first.max(other.first);
        let last = self.last.min(other.last);
        (first <= last).then_some(DateSpan { first, last })
    }
}

/// A parsed count cell.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Cell {
    Value(f64),
    Missing,
    Erroneous,
}

fn parse_cell(raw: &str, line: u64) -> Result<Cell, DataError> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(Cell::Missing);
    }
    let v: f64 = t.parse().map_err(|_| DataError::BadValue {
        line,
        value: t.to_string(),
    })?;
    if !v.is_finite() {
        return Err(DataError::BadValue {
            line,
            value: t.to_string(),
        });
    }
    Ok(if v == -1.0 {
        Cell::Missing
    } else if v < 0.0 {
        Cell::Erroneous
    } else {
        Cell::Value(v)
    })
}

fn parse_date(raw: &str, line: u64) -> Result<NaiveDate, DataError> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|_| DataError::BadDate {
        line,
        value: raw.trim().to_string(),
    })
}

fn parse_region(raw: &str, line: u64) -> Result<Region, DataError> {
    raw.parse().map_err(|_| DataError::UnknownRegion {
        line,
        region: raw.trim().to_string(),
    })
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn read_rows<R: Read>(reader: R, expected: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    let found: Vec<&str> = header.iter().collect();
    // An empty file has no header row at all; treat it as zero rows.
    if found.len() == 1 && found[0].is_empty() || found.is_empty() {
        return Ok(Vec::new());
    }
    if found != expected {
        return Err(DataError::Header {
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected.len() {
            return Err(DataError::Csv(format!(
                "line {line}: expected {} fields, got {}",
                expected.len(),
                rec.len()
            )));
        }
        rows.push((line, rec));
    }
    Ok(rows)
}

/// Daily case counts per region over a contiguous date span.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseTable {
    pub span: DateSpan,
    /// `values[day][region]`; `None` when the region has no usable value that day.
    pub values: Vec<[Option<f64>; NUM_REGIONS]>,
    /// Days carrying an explicit missing or erroneous (negative) value.
    pub flagged: Vec<bool>,
    pub regions: Vec<Region>,
}

impl CaseTable {
    /// The day-by-day series of one region (`None` = missing).
    pub fn series(&self, region: Region) -> Vec<Option<f64>> {
        self.values.iter().map(|day| day[region.index()]).collect()
    }

    /// True when the day can be used: no flag and all ten regions present.
    pub fn usable(&self, day: usize) -> bool {
        !self.flagged[day] && self.values[day].iter().all(Option::is_some)
    }
}

pub fn load_cases(path: &Path) -> Result<CaseTable, DataError> {
    read_cases(open(path)?)
}

pub fn read_cases<R: Read>(reader: R) -> Result<CaseTable, DataError> {
    let rows = read_rows(reader, &["date", "region", "cases"])?;
    let mut parsed = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let date = parse_date(&rec[0], *line)?;
        let region = parse_region(&rec[1], *line)?;
        let cell = parse_cell(&rec[2], *line)?;
        parsed.push((*line, date, region, cell));
    }
    let Some(first) = parsed.iter().map(|p| p.1).min() else {
        return Err(DataError::Empty("cases"));
    };
    let last = parsed.iter().map(|p| p.1).max().unwrap_or(first);
    let span = DateSpan::new(first, last);
    let mut values = vec![[None; NUM_REGIONS]; span.days()];
    let mut flagged = vec![false; span.days()];
    let mut seen = HashSet::new();
    let mut regions = Vec::new();
    for (line, date, region, cell) in parsed {
        if !seen.insert((date, region)) {
            return Err(DataError::DuplicateCases { line, date, region });
        }
        if !regions.contains(&region) {
            regions.push(region);
        }
        let d = span.offset(date).expect("date within its own span");
        match cell {
            Cell::Value(v) => values[d][region.index()] = Some(v),
            Cell::Missing | Cell::Erroneous => flagged[d] = true,
        }
    }
    regions.sort();
    Ok(CaseTable {
        span,
        values,
        flagged,
        regions,
    })
}

/// Daily directed flight counts between regions over a contiguous span.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightTable {
    pub span: Option<DateSpan>,
    /// `matrices[day][src * NUM_REGIONS + dst]`; absent pairs are 0.
    pub matrices: Vec<Vec<f64>>,
    pub flagged: Vec<bool>,
}

impl FlightTable {
    pub fn days(&self) -> usize {
        self.matrices.len()
    }
}

/// Loads `flights.csv`. When `span` is given the table covers exactly that
/// span (rows outside it are ignored); otherwise it covers the file's dates.
pub fn load_flights(path: &Path, span: Option<DateSpan>) -> Result<FlightTable, DataError> {
    read_flights(open(path)?, span)
}

pub fn read_flights<R: Read>(reader: R, span: Option<DateSpan>) -> Result<FlightTable, DataError> {
    let rows = read_rows(reader, &["date", "src", "dst", "flights"])?;
    let mut parsed = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let date = parse_date(&rec[0], *line)?;
        let src = parse_region(&rec[1], *line)?;
        let dst = parse_region(&rec[2], *line)?;
        if src == dst {
            return Err(DataError::SelfLoop { line: *line, region: src });
        }
        let cell = parse_cell(&rec[3], *line)?;
        parsed.push((*line, date, src, dst, cell));
    }
    let span = span.or_else(|| {
        let first = parsed.iter().map(|p| p.1).min()?;
        let last = parsed.iter().map(|p| p.1).max()?;
        Some(DateSpan::new(first, last))
    });
    let days = span.map_or(0, |s| s.days());
    let mut matrices = vec![vec![0.0; NUM_REGIONS * NUM_REGIONS]; days];
    let mut flagged = vec![false; days];
    let mut seen = HashSet::new();
    for (line, date, src, dst, cell) in parsed {
        if !seen.insert((date, src, dst)) {
            return Err(DataError::DuplicateFlight { line, date, src, dst });
        }
        let Some(d) = span.and_then(|s| s.offset(date)) else {
            continue;
        };
        match cell {
            Cell::Value(v) => matrices[d][src.index() * NUM_REGIONS + dst.index()] = v,
            Cell::Missing | Cell::Erroneous => flagged[d] = true,
        }
    }
    Ok(FlightTable {
        span,
        matrices,
        flagged,
    })
}
