use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::preprocess::DailyGraph;
use super::DataError;

/// Days of input per sample.
pub const WINDOW_DAYS: usize = 7;

/// Seven consecutive days of graphs plus the transformed cases of the day after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    /// Index of the first input day in the graph list the window was cut from.
    pub start: usize,
    pub graphs: Vec<DailyGraph>,
    pub target: Vec<f64>,
    pub target_date: NaiveDate,
}

impl WindowSample {
    pub fn start_date(&self) -> NaiveDate {
        self.graphs[0].date
    }
}

fn consecutive(graphs: &[DailyGraph]) -> bool {
    graphs.windows(2).all(|p| p[1].date - p[0].date == Duration::days(1))
}

/// Start indices of every position with `len` consecutive days.
pub fn consecutive_starts(graphs: &[DailyGraph], len: usize) -> Vec<usize> {
    if graphs.len() < len {
        return Vec::new();
    }
    (0..=graphs.len() - len)
        .filter(|&s| consecutive(&graphs[s..s + len]))
        .collect()
}

/// One window per position where `WINDOW_DAYS + 1` consecutive retained days exist.
pub fn make_windows(graphs: &[DailyGraph]) -> Result<Vec<WindowSample>, DataError> {
    let windows: Vec<WindowSample> = consecutive_starts(graphs, WINDOW_DAYS + 1)
        .into_iter()
        .map(|s| WindowSample {
            start: s,
            graphs: graphs[s..s + WINDOW_DAYS].to_vec(),
            target: graphs[s + WINDOW_DAYS].cases.clone(),
            target_date: graphs[s + WINDOW_DAYS].date,
        })
        .collect();
    if windows.is_empty() {
        return Err(DataError::NoWindows);
    }
    Ok(windows)
}

/// Chronological train/validation/test partition of window samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<WindowSample>,
    pub validation: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Sizes of a 64/16/20 split; validation and test are rounded down so the
/// remainder goes to training.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = n * 20 / 100;
    let validation = n * 16 / 100;
    (n - validation - test, validation, test)
}

pub fn split(mut windows: Vec<WindowSample>) -> Result<DatasetSplit, DataError> {
    if windows.is_empty() {
        return Err(DataError::NoWindows);
    }
    windows.sort_by_key(|w| w.start_date());
    let (n_train, n_val, _) = split_sizes(windows.len());
    let test = windows.split_off(n_train + n_val);
    let validation = windows.split_off(n_train);
    Ok(DatasetSplit {
        train: windows,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graphs(dates: &[i64]) -> Vec<DailyGraph> {
        let base = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        dates
            .iter()
            .map(|&d| DailyGraph::from_raw(base + Duration::days(d), vec![1.0; 10], vec![1.0; 10], vec![0.0; 100]))
            .collect()
    }

    #[test]
    fn eight_days_one_window() {
        let g = graphs(&(0..8).collect::<Vec<_>>());
        assert_eq!(make_windows(&g).unwrap().len(), 1);
    }

    #[test]
    fn ten_days_three_windows() {
        let g = graphs(&(0..10).collect::<Vec<_>>());
        let w = make_windows(&g).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].start, 2);
    }

    #[test]
    fn windows_skip_gaps() {
        // 0..9 then 11..19: gap at day 10
        let days: Vec<i64> = (0..10).chain(11..20).collect();
        let w = make_windows(&graphs(&days)).unwrap();
        assert_eq!(w.len(), 3 + 2);
        for s in &w {
            let mut dates: Vec<_> = s.graphs.iter().map(|g| g.date).collect();
            dates.push(s.target_date);
            assert!(dates.windows(2).all(|p| p[1] - p[0] == Duration::days(1)));
        }
    }

    #[test]
    fn too_few_days() {
        assert!(matches!(make_windows(&graphs(&[0, 1, 2])), Err(DataError::NoWindows)));
    }

    #[test]
    fn hundred_windows_split() {
        assert_eq!(split_sizes(100), (64, 16, 20));
        let g = graphs(&(0..107).collect::<Vec<_>>());
        let s = split(make_windows(&g).unwrap()).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (64, 16, 20));
        let last_train = s.train.last().unwrap();
        assert!(last_train.start_date() < s.validation[0].start_date());
        assert!(last_train.target_date < s.validation[0].target_date);
        assert!(s.validation.last().unwrap().start_date() < s.test[0].start_date());
    }
}
