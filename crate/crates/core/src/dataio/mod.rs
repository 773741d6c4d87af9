//! Loading, cleaning and windowing of the daily case and flight data.

mod load;
mod preprocess;
mod region;
pub mod synth;
mod windows;

use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

pub use load::{load_cases, load_flights, read_cases, read_flights, CaseTable, DateSpan, FlightTable};
pub use preprocess::{consecutive_runs, preprocess, trailing_mean, DailyGraph, MIN_RUN_DAYS, SMOOTHING_DAYS};
pub use region::{Region, UnknownRegion, NUM_REGIONS, REGIONS};
pub use windows::{consecutive_starts, make_windows, split, split_sizes, DatasetSplit, WindowSample, WINDOW_DAYS};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: unknown region `{region}`")]
    UnknownRegion { line: u64, region: String },
    #[error("line {line}: bad date `{value}`")]
    BadDate { line: u64, value: String },
    #[error("line {line}: bad count `{value}`")]
    BadValue { line: u64, value: String },
    #[error("line {line}: duplicate case row for {region} on {date}")]
    DuplicateCases { line: u64, date: NaiveDate, region: Region },
    #[error("line {line}: duplicate flight row {src} -> {dst} on {date}")]
    DuplicateFlight {
        line: u64,
        date: NaiveDate,
        src: Region,
        dst: Region,
    },
    #[error("line {line}: flights from {region} to itself are not allowed")]
    SelfLoop { line: u64, region: Region },
    #[error("{0} file has no data rows")]
    Empty(&'static str),
    #[error("case and flight date ranges do not overlap")]
    NoOverlap,
    #[error("no run of at least {min} consecutive usable days (longest is {longest})", min = MIN_RUN_DAYS)]
    TooShort { longest: usize },
    #[error("no complete input window could be formed")]
    NoWindows,
}

/// Preprocessed graphs and every window cut from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graphs: Vec<DailyGraph>,
    pub windows: Vec<WindowSample>,
}

impl Dataset {
    pub fn from_tables(cases: &CaseTable, flights: &FlightTable) -> Result<Self, DataError> {
        let graphs = preprocess(cases, flights)?;
        let windows = make_windows(&graphs)?;
        Ok(Self { graphs, windows })
    }

    /// Loads both CSVs; the flight table is restricted to the case date span.
    pub fn load(cases_path: &Path, flights_path: &Path) -> Result<Self, DataError> {
        let cases = load_cases(cases_path)?;
        let flights = load_flights(flights_path, Some(cases.span))?;
        Self::from_tables(&cases, &flights)
    }

    pub fn synthetic(cfg: &synth::SynthConfig) -> Result<Self, DataError> {
        let data = synth::generate(cfg);
        Self::from_tables(&data.case_table(), &data.flight_table())
    }

    pub fn split(&self) -> Result<DatasetSplit, DataError> {
        split(self.windows.clone())
    }

    /// Graph indices `s` such that days `s .. s + 7 + horizon` are consecutive,
    /// i.e. windows that have `horizon` days of ground truth after them.
    pub fn forecast_starts(&self, horizon: usize) -> Vec<usize> {
        consecutive_starts(&self.graphs, WINDOW_DAYS + horizon)
    }

    pub fn graph_index(&self, date: NaiveDate) -> Option<usize> {
        self.graphs.binary_search_by_key(&date, |g| g.date).ok()
    }
}
