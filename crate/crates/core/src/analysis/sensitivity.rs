use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::stats::median;
use super::{fit_gumbel, AnalysisError, GumbelFit, Perturbation, Scenario};
use crate::dataio::Region;
use crate::forecast::{BiasFactors, ForecastWindow, OneStepModel};

/// Sum over days and over every region except `region` of the absolute
/// change between two `[day][node]` forecasts.
pub fn sensitivity_score(base: &[Vec<f64>], perturbed: &[Vec<f64>], region: usize) -> f64 {
    let mut total = 0.0;
    for (b, p) in base.iter().zip(perturbed) {
        for (n, (x, y)) in b.iter().zip(p).enumerate() {
            if n != region {
                total += (y - x).abs();
            }
        }
    }
    total
}

/// Sensitivity of one model's forecast from one window to isolating `region`.
pub fn node_sensitivity<M: OneStepModel>(
    model: &M,
    window: &ForecastWindow,
    region: usize,
    factors: &BiasFactors,
    days: usize,
) -> Result<f64, AnalysisError> {
    let models = std::slice::from_ref(model);
    let windows = std::slice::from_ref(window);
    let scn = Scenario::new(models, windows, factors, days)?;
    let pert = scn.perturbed(&Perturbation::isolate(scn.nodes(), region))?;
    Ok(sensitivity_score(&scn.baseline()[0][0], &pert[0][0], region))
}

/// Per-window, per-region, per-model scores for isolating each region in turn:
/// `[window][region][model]`.
#[allow(clippy::needless_range_loop)]
pub fn sensitivity_scores<M: OneStepModel>(scn: &Scenario<M>) -> Result<Vec<Vec<Vec<f64>>>, AnalysisError> {
    let nodes = scn.nodes();
    let windows = scn.windows.len();
    let mut out = vec![vec![Vec::with_capacity(scn.models.len()); nodes]; windows];
    for s in 0..nodes {
        let pert = scn.perturbed(&Perturbation::isolate(nodes, s))?;
        for (m, model_fc) in pert.iter().enumerate() {
            for (w, fc) in model_fc.iter().enumerate() {
                out[w][s].push(sensitivity_score(&scn.baseline()[m][w], fc, s));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub window_start: NaiveDate,
    pub region: String,
    pub region_index: usize,
    pub scores: Vec<f64>,
    pub fit: GumbelFit,
    pub mu_normalized: f64,
    /// 1 is the most sensitive region in the window; ties share the best rank.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region: String,
    pub region_index: usize,
    pub median_mu: f64,
    pub median_mu_normalized: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub models: usize,
    pub days: usize,
    pub windows: Vec<NaiveDate>,
    pub records: Vec<SensitivityRecord>,
    /// Regions ordered by overall rank.
    pub summary: Vec<RegionSummary>,
}

fn region_code(i: usize) -> String {
    Region::from_index(i).map(|r| r.code().to_string()).unwrap_or_else(|| i.to_string())
}

/// Competition ranks by descending value ("1224").
pub fn descending_ranks(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|v| 1 + values.iter().filter(|&&o| o > *v).count())
        .collect()
}

/// Builds records and rankings from `[window][region][model]` scores.
pub fn summarize(window_starts: &[NaiveDate], scores: &[Vec<Vec<f64>>], days: usize) -> Result<SensitivityReport, AnalysisError> {
    if scores.is_empty() || window_starts.len() != scores.len() {
        return Err(AnalysisError::NoWindows);
    }
    let nodes = scores[0].len();
    let models = scores[0].first().map(Vec::len).unwrap_or(0);
    let mut fits = Vec::with_capacity(scores.len());
    for w in scores {
        fits.push(w.iter().map(|s| fit_gumbel(s)).collect::<Result<Vec<_>, _>>()?);
    }
    let all_mu: Vec<f64> = fits.iter().flatten().map(|f| f.mu).collect();
    let lo = all_mu.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all_mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm = |mu: f64| if hi > lo { (mu - lo) / (hi - lo) } else { 0.0 };

    let mut records = Vec::with_capacity(scores.len() * nodes);
    for ((start, w), wf) in window_starts.iter().zip(scores).zip(&fits) {
        let mus: Vec<f64> = wf.iter().map(|f| f.mu).collect();
        let ranks = descending_ranks(&mus);
        for s in 0..nodes {
            records.push(SensitivityRecord {
                window_start: *start,
                region: region_code(s),
                region_index: s,
                scores: w[s].clone(),
                fit: wf[s],
                mu_normalized: norm(wf[s].mu),
                rank: ranks[s],
            });
        }
    }

    let medians: Vec<(f64, f64)> = (0..nodes)
        .map(|s| {
            let mu: Vec<f64> = fits.iter().map(|w| w[s].mu).collect();
            let mn: Vec<f64> = mu.iter().map(|&m| norm(m)).collect();
            (median(&mu), median(&mn))
        })
        .collect();
    let ranks = descending_ranks(&medians.iter().map(|m| m.1).collect::<Vec<_>>());
    let mut summary: Vec<RegionSummary> = (0..nodes)
        .map(|s| RegionSummary {
            region: region_code(s),
            region_index: s,
            median_mu: medians[s].0,
            median_mu_normalized: medians[s].1,
            rank: ranks[s],
        })
        .collect();
    summary.sort_by_key(|r| (r.rank, r.region_index));
    Ok(SensitivityReport {
        models,
        days,
        windows: window_starts.to_vec(),
        records,
        summary,
    })
}

pub fn sensitivity_sweep<M: OneStepModel>(scn: &Scenario<M>) -> Result<SensitivityReport, AnalysisError> {
    let scores = sensitivity_scores(scn)?;
    let starts: Vec<NaiveDate> = scn.windows.iter().map(|w| w.start_date).collect();
    summarize(&starts, &scores, scn.days)
}

impl SensitivityReport {
    pub fn window_records(&self, start: NaiveDate) -> Vec<&SensitivityRecord> {
        self.records.iter().filter(|r| r.window_start == start).collect()
    }

    /// `window_start,region,mu,mu_normalized,rank`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| AnalysisError::Export(e.to_string());
        w.write_record(["window_start", "region", "mu", "mu_normalized", "rank"]).map_err(err)?;
        for r in &self.records {
            w.write_record([
                r.window_start.to_string(),
                r.region.clone(),
                r.fit.mu.to_string(),
                r.mu_normalized.to_string(),
                r.rank.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| AnalysisError::Export(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
