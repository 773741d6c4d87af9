//! Plot-ready JSON series. Each file records the manifest it derives from.

use std::path::Path;

use aerograph_core::analysis::{pearson, power_law_fit, spearman, PowerLaw, Quadrant};
use aerograph_core::dataio::NUM_REGIONS;
use aerograph_core::training::{member_report_name, PreparedWindows, TrainReport};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::context::RunContext;
use crate::error::{Error, Result};
use crate::manifest::write_json;
use crate::ops::{factors_table, RegionFactor, forecast_window, region_code, ForecastResponse, SensitivityArtifact, SweepArtifact, SENSITIVITY_FILE, SWEEP_FILE};

pub const PLOT_DIR: &str = "plots";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlot {
    pub manifest_hash: String,
    pub members: Vec<TrainReport>,
    /// Ensemble-mean one-step predictions on the test split, transformed domain.
    pub test_predicted: Vec<f64>,
    pub test_actual: Vec<f64>,
    pub test_pearson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPlot {
    pub manifest_hash: String,
    pub factors: Vec<RegionFactor>,
    /// The last window with a full horizon after it.
    pub forecast: ForecastResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSensitivity {
    pub region: String,
    pub rank: usize,
    pub median_mu_normalized: f64,
    /// Normalized location per window, in window order.
    pub mu_normalized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPlot {
    pub manifest_hash: String,
    pub windows: Vec<NaiveDate>,
    /// Ordered by median, most sensitive first.
    pub regions: Vec<RegionSensitivity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightsPoint {
    pub region: String,
    /// Mean daily outgoing flights over the dataset.
    pub outgoing_flights: f64,
    pub median_mu_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightsVsSensitivityPlot {
    pub manifest_hash: String,
    pub points: Vec<FlightsPoint>,
    pub spearman: Option<f64>,
    /// `None` when a value is not positive.
    pub power_law: Option<PowerLaw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoint {
    pub policy_id: usize,
    pub label: String,
    pub avg_daily_flight_reduction: f64,
    pub impact: f64,
    pub quadrant: Quadrant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPlot {
    pub manifest_hash: String,
    pub median_reduction: f64,
    pub median_impact: f64,
    pub points: Vec<PolicyPoint>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlotsReport {
    pub written: Vec<String>,
    /// File name and the reason it was not written.
    pub skipped: Vec<(String, String)>,
}

pub fn training_plot(ctx: &RunContext) -> Result<TrainingPlot> {
    let mut members = Vec::with_capacity(ctx.manifest.reports.len());
    for (i, r) in ctx.manifest.reports.iter().enumerate() {
        let path = ctx.dir.join(&r.path);
        crate::manifest::verify(&path, r)?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let report: TrainReport =
            serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", member_report_name(i))))?;
        members.push(report);
    }
    let test = PreparedWindows::new(&ctx.dataset.split()?.test);
    let mut predicted = vec![0.0; test.targets.len()];
    for model in &ctx.models {
        for (acc, p) in predicted.iter_mut().zip(test.predict(model)?) {
            *acc += p / ctx.models.len() as f64;
        }
    }
    let test_pearson = pearson(&predicted, &test.targets)?;
    Ok(TrainingPlot {
        manifest_hash: ctx.manifest_hash.clone(),
        members,
        test_predicted: predicted,
        test_actual: test.targets,
        test_pearson,
    })
}

pub fn forecast_plot(ctx: &RunContext, days: usize) -> Result<ForecastPlot> {
    let factors = ctx.factors()?;
    let last = *ctx
        .dataset
        .forecast_starts(days)
        .last()
        .ok_or_else(|| Error::data(format!("no window has {days} days of data after it")))?;
    let start = ctx.dataset.graphs[last].date;
    Ok(ForecastPlot {
        manifest_hash: ctx.manifest_hash.clone(),
        factors: factors_table(factors),
        forecast: forecast_window(ctx, start, days, None)?,
    })
}

pub fn sensitivity_plot(art: &SensitivityArtifact) -> SensitivityPlot {
    let report = &art.report;
    SensitivityPlot {
        manifest_hash: art.manifest_hash.clone(),
        windows: report.windows.clone(),
        regions: report
            .summary
            .iter()
            .map(|s| RegionSensitivity {
                region: s.region.clone(),
                rank: s.rank,
                median_mu_normalized: s.median_mu_normalized,
                mu_normalized: report
                    .records
                    .iter()
                    .filter(|r| r.region_index == s.region_index)
                    .map(|r| r.mu_normalized)
                    .collect(),
            })
            .collect(),
    }
}

/// Mean daily outgoing flights per region.
pub fn mean_outgoing_flights(ctx: &RunContext) -> Vec<f64> {
    let mut total = [0.0; NUM_REGIONS];
    for g in &ctx.dataset.graphs {
        for (t, f) in total.iter_mut().zip(g.outgoing_flights()) {
            *t += f;
        }
    }
    let days = ctx.dataset.graphs.len() as f64;
    total.iter().map(|t| t / days).collect()
}

pub fn flights_vs_sensitivity_plot(ctx: &RunContext, art: &SensitivityArtifact) -> FlightsVsSensitivityPlot {
    let flights = mean_outgoing_flights(ctx);
    let mut mu = vec![0.0; NUM_REGIONS];
    for s in &art.report.summary {
        mu[s.region_index] = s.median_mu_normalized;
    }
    FlightsVsSensitivityPlot {
        manifest_hash: art.manifest_hash.clone(),
        points: (0..NUM_REGIONS)
            .map(|i| FlightsPoint {
                region: region_code(i),
                outgoing_flights: flights[i],
                median_mu_normalized: mu[i],
            })
            .collect(),
        spearman: spearman(&flights, &mu).ok(),
        power_law: power_law_fit(&flights, &mu).ok(),
    }
}

pub fn policy_plot(art: &SweepArtifact) -> PolicyPlot {
    let sweep = &art.sweep;
    PolicyPlot {
        manifest_hash: art.manifest_hash.clone(),
        median_reduction: sweep.median_reduction,
        median_impact: sweep.median_impact,
        points: sweep
            .results
            .iter()
            .map(|r| PolicyPoint {
                policy_id: r.policy_id,
                label: r
                    .reductions
                    .iter()
                    .map(|f| format!("{}:{}", f.region, f.fraction))
                    .collect::<Vec<_>>()
                    .join(";"),
                avg_daily_flight_reduction: r.avg_daily_flight_reduction,
                impact: r.impact,
                quadrant: r.quadrant,
            })
            .collect(),
    }
}

fn record<T: Serialize>(dir: &Path, name: &str, value: Result<T>, report: &mut PlotsReport) -> Result<()> {
    match value {
        Ok(v) => {
            write_json(&dir.join(name), &v)?;
            report.written.push(name.to_string());
        }
        Err(e) => {
            log::warn!("skipping {name}: {e}");
            report.skipped.push((name.to_string(), e.message));
        }
    }
    Ok(())
}

/// Writes every plot whose inputs exist into `<run>/plots`. A stale
/// sensitivity or sweep artifact is an error; a missing one is skipped.
pub fn emit(ctx: &RunContext, days: usize) -> Result<PlotsReport> {
    let dir = ctx.dir.join(PLOT_DIR);
    let mut report = PlotsReport::default();
    record(&dir, "training.json", training_plot(ctx), &mut report)?;
    record(&dir, "forecast.json", forecast_plot(ctx, days), &mut report)?;

    let missing = |cmd: &str| Err(Error::new(crate::error::ErrorKind::NotProvisioned, format!("run `aerograph {cmd}` first")));
    let sens: Option<SensitivityArtifact> = ctx.read_artifact(SENSITIVITY_FILE)?;
    match &sens {
        Some(a) => {
            record(&dir, "sensitivity.json", Ok(sensitivity_plot(a)), &mut report)?;
            record(&dir, "flights_vs_sensitivity.json", Ok(flights_vs_sensitivity_plot(ctx, a)), &mut report)?;
        }
        None => {
            record::<()>(&dir, "sensitivity.json", missing("sensitivity"), &mut report)?;
            record::<()>(&dir, "flights_vs_sensitivity.json", missing("sensitivity"), &mut report)?;
        }
    }
    let sweep: Option<SweepArtifact> = ctx.read_artifact(SWEEP_FILE)?;
    match &sweep {
        Some(a) => record(&dir, "policy.json", Ok(policy_plot(a)), &mut report)?,
        None => record::<()>(&dir, "policy.json", missing("policy"), &mut report)?,
    }
    Ok(report)
}
