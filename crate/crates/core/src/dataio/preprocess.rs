use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::load::{CaseTable, FlightTable};
use super::region::NUM_REGIONS;
use super::DataError;
use crate::numerics::log10p1;

/// Width of the trailing case moving average.
pub const SMOOTHING_DAYS: usize = 7;
/// Shortest retained run that can still yield a window after smoothing.
pub const MIN_RUN_DAYS: usize = 16;

/// One retained day of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyGraph {
    pub date: NaiveDate,
    /// `log10(x + 1)` of the 7-day smoothed daily cases, per region.
    pub cases: Vec<f64>,
    /// `log10(x + 1)` of daily flights, row-major `src * 10 + dst`.
    pub flights: Vec<f64>,
    /// Reported (unsmoothed) daily cases.
    pub raw_cases: Vec<f64>,
    /// Trailing 7-day mean of reported cases; `pow10m1(cases)` up to rounding.
    pub smoothed_cases: Vec<f64>,
    pub raw_flights: Vec<f64>,
}

impl DailyGraph {
    /// Builds a graph from raw (smoothed) cases and raw flights, applying the
    /// `log10(x + 1)` transform. The flight diagonal is forced to zero.
    pub fn from_raw(date: NaiveDate, raw_cases: Vec<f64>, smoothed_cases: Vec<f64>, mut raw_flights: Vec<f64>) -> Self {
        let n = smoothed_cases.len();
        for i in 0..n {
            raw_flights[i * n + i] = 0.0;
        }
        Self {
            date,
            cases: smoothed_cases.iter().map(|&v| log10p1(v)).collect(),
            flights: raw_flights.iter().map(|&v| log10p1(v)).collect(),
            raw_cases,
            smoothed_cases,
            raw_flights,
        }
    }

    pub fn nodes(&self) -> usize {
        self.cases.len()
    }

    /// Total raw flights leaving each region.
    pub fn outgoing_flights(&self) -> Vec<f64> {
        let n = self.nodes();
        (0..n).map(|u| self.raw_flights[u * n..(u + 1) * n].iter().sum()).collect()
    }
}

/// Maximal runs of consecutive `true` entries, as `(start, len)`.
pub fn consecutive_runs(retained: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &keep) in retained.iter().enumerate() {
        match (keep, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - s));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, retained.len() - s));
    }
    runs
}

/// Trailing moving average; the output has `values.len() - (width - 1)` entries
/// and entry `i` averages `values[i..i + width]`.
pub fn trailing_mean(values: &[f64], width: usize) -> Vec<f64> {
    if values.len() < width {
        return Vec::new();
    }
    values
        .windows(width)
        .map(|w| w.iter().sum::<f64>() / width as f64)
        .collect()
}

/// Aligns the two sources, deletes flagged days, smooths cases within runs of
/// consecutive retained days and applies the `log10(x + 1)` transform.
pub fn preprocess(cases: &CaseTable, flights: &FlightTable) -> Result<Vec<DailyGraph>, DataError> {
    let fspan = flights.span.ok_or(DataError::NoOverlap)?;
    let span = cases.span.intersect(&fspan).ok_or(DataError::NoOverlap)?;

    let retained: Vec<bool> = (0..span.days())
        .map(|i| {
            let date = span.date(i);
            let dc = cases.span.offset(date).expect("inside case span");
            let df = fspan.offset(date).expect("inside flight span");
            cases.usable(dc) && !flights.flagged[df]
        })
        .collect();
    let runs = consecutive_runs(&retained);
    let longest = runs.iter().map(|r| r.1).max().unwrap_or(0);
    if longest < MIN_RUN_DAYS {
        return Err(DataError::TooShort { longest });
    }

    let mut graphs = Vec::new();
    for (start, len) in runs {
        if len < SMOOTHING_DAYS {
            continue;
        }
        let raw: Vec<Vec<f64>> = (start..start + len)
            .map(|i| {
                let dc = cases.span.offset(span.date(i)).expect("inside case span");
                cases.values[dc].iter().map(|v| v.expect("usable day")).collect()
            })
            .collect();
        let smoothed_cols: Vec<Vec<f64>> = (0..NUM_REGIONS)
            .map(|r| {
                let col: Vec<f64> = raw.iter().map(|day| day[r]).collect();
                trailing_mean(&col, SMOOTHING_DAYS)
            })
            .collect();
        for k in 0..len - (SMOOTHING_DAYS - 1) {
            let i = start + k + SMOOTHING_DAYS - 1;
            let date = span.date(i);
            let df = fspan.offset(date).expect("inside flight span");
            let smoothed: Vec<f64> = smoothed_cols.iter().map(|c| c[k]).collect();
            graphs.push(DailyGraph::from_raw(
                date,
                raw[k + SMOOTHING_DAYS - 1].clone(),
                smoothed,
                flights.matrices[df].clone(),
            ));
        }
    }
    Ok(graphs)
}
