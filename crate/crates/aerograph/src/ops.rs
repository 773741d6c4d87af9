//! Operations shared by the command line and the HTTP service.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use aerograph_core::analysis::{
    assemble_sweep, avg_daily_flight_reduction, enumerate_policies, impact_between, region_fractions, sample_policies,
    sensitivity_sweep, DEFAULT_POLICY_MODELS, Perturbation, PolicySweep, Quadrant, RegionFraction, Scenario, SensitivityReport,
};
use aerograph_core::dataio::synth::{generate, SynthConfig};
use aerograph_core::dataio::{Dataset, Region, NUM_REGIONS, REGIONS};
use aerograph_core::forecast::{
    compute_bias_factors, recursive_predict_many, write_forecast_csv, BiasFactors, ForecastWindow, RecursiveForecast,
};
use aerograph_core::training::{member_checkpoint_name, member_report_name, save_ensemble, train_ensemble, TrainConfig};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::context::{parse_region, RunContext, Stamped};
use crate::error::{Error, ErrorKind, Result};
use crate::manifest::{write_file, write_json, BiasRecord, FileRef, RunManifest, BIAS_FILE, CHECKPOINT_DIR, MANIFEST_VERSION};

pub const CASES_FILE: &str = "cases.csv";
pub const FLIGHTS_FILE: &str = "flights.csv";
pub const BIAS_CSV: &str = "bias_factors.csv";
pub const FORECAST_FILE: &str = "forecast.json";
pub const FORECAST_CSV: &str = "forecast.csv";
pub const SENSITIVITY_FILE: &str = "sensitivity.json";
pub const SENSITIVITY_CSV: &str = "sensitivity.csv";
pub const SWEEP_FILE: &str = "policy_sweep.json";
pub const SWEEP_CSV: &str = "policy.csv";

/// Nodes used for a policy sweep when none are given.
pub const DEFAULT_SWEEP_NODES: usize = 5;

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn region_code(i: usize) -> String {
    Region::from_index(i).map(|r| r.code().to_string()).unwrap_or_else(|| i.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    pub days: usize,
    pub windows: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Windows with 30 days of data after them.
    pub forecast_windows: usize,
}

pub fn ingest(cases: &Path, flights: &Path) -> Result<IngestReport> {
    let ds = Dataset::load(cases, flights)?;
    let split = ds.split()?;
    Ok(IngestReport {
        first_day: ds.graphs[0].date,
        last_day: ds.graphs[ds.graphs.len() - 1].date,
        days: ds.graphs.len(),
        windows: ds.windows.len(),
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
        forecast_windows: ds.forecast_starts(aerograph_core::forecast::DEFAULT_HORIZON).len(),
    })
}

/// Writes `cases.csv` and `flights.csv` into `out`.
pub fn synth(out: &Path, cfg: &SynthConfig) -> Result<(PathBuf, PathBuf)> {
    let data = generate(cfg);
    let cases = out.join(CASES_FILE);
    let flights = out.join(FLIGHTS_FILE);
    let mut buf = Vec::new();
    data.write_cases_csv(&mut buf).map_err(|e| Error::runtime(e.to_string()))?;
    write_file(&cases, &buf)?;
    buf.clear();
    data.write_flights_csv(&mut buf).map_err(|e| Error::runtime(e.to_string()))?;
    write_file(&flights, &buf)?;
    Ok((cases, flights))
}

fn absolute(path: &Path) -> Result<String> {
    let p = path
        .canonicalize()
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(p.display().to_string())
}

/// Trains the ensemble and writes checkpoints, reports and a fresh manifest.
pub fn train(cases: &Path, flights: &Path, out: &Path, config: &TrainConfig) -> Result<RunManifest> {
    config.validate()?;
    let cases_ref = FileRef::of(cases, absolute(cases)?)?;
    let flights_ref = FileRef::of(flights, absolute(flights)?)?;
    let ds = Dataset::load(cases, flights)?;
    let split = ds.split()?;
    log::info!(
        "training {} models on {} windows ({} validation)",
        config.ensemble_size,
        split.train.len(),
        split.validation.len()
    );
    let members = train_ensemble(&split, config)?;
    let ck_dir = out.join(CHECKPOINT_DIR);
    save_ensemble(&members, &ck_dir).map_err(|e| Error::runtime(e.to_string()))?;

    let mut checkpoints = Vec::with_capacity(members.len());
    let mut reports = Vec::with_capacity(members.len());
    for i in 0..members.len() {
        for (name, list) in [(member_checkpoint_name(i), &mut checkpoints), (member_report_name(i), &mut reports)] {
            let rel = format!("{CHECKPOINT_DIR}/{name}");
            list.push(FileRef::of(&out.join(&rel), rel)?);
        }
    }
    let manifest = RunManifest {
        version: MANIFEST_VERSION,
        cases: cases_ref,
        flights: flights_ref,
        train: config.clone(),
        checkpoint_dir: CHECKPOINT_DIR.to_string(),
        checkpoints,
        reports,
        bias: None,
        created: chrono::Utc::now().to_rfc3339(),
    };
    manifest.save(out)?;
    Ok(manifest)
}

/// Fits bias factors on every `stride`-th window, writes them and records
/// them in the manifest. Returns the updated context.
pub fn bias(ctx: &RunContext, days: usize, stride: usize) -> Result<RunContext> {
    let windows = ctx.windows(days, stride)?;
    log::info!("fitting bias factors on {} windows x {} models", windows.len(), ctx.models.len());
    let factors = compute_bias_factors(&ctx.models, &windows, days)?;
    factors.validate()?;
    let path = ctx.dir.join(BIAS_FILE);
    write_file(&path, factors.to_json().as_bytes())?;
    let mut buf = Vec::new();
    factors.write_csv(&mut buf)?;
    write_file(&ctx.dir.join(BIAS_CSV), &buf)?;

    let mut manifest = ctx.manifest.clone();
    manifest.bias = Some(BiasRecord {
        file: FileRef::of(&path, BIAS_FILE)?,
        days,
        window_stride: stride,
    });
    manifest.save(&ctx.dir)?;
    RunContext::open(&ctx.dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionForecast {
    pub region: String,
    /// Ensemble mean of raw forecasts floored at zero.
    pub raw: Vec<f64>,
    /// Ensemble mean of bias-corrected forecasts.
    pub corrected: Vec<f64>,
    /// Smoothed reported cases on the forecast days.
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResponse {
    pub manifest_hash: String,
    pub window_start: NaiveDate,
    pub days: usize,
    pub models: usize,
    pub regions: Vec<RegionForecast>,
}

fn model_forecasts(ctx: &RunContext, models: usize, windows: &[ForecastWindow], days: usize) -> Result<Vec<RecursiveForecast>> {
    let factors = ctx.factors()?;
    let inputs = windows.iter().map(ForecastWindow::input).collect::<std::result::Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(models * windows.len());
    for (m, model) in ctx.ensemble(models)?.iter().enumerate() {
        for (w, transformed) in windows.iter().zip(recursive_predict_many(model, &inputs, days)?) {
            out.push(RecursiveForecast::new(w.start_date, m, transformed, factors));
        }
    }
    Ok(out)
}

fn ensemble_mean_response(ctx: &RunContext, window: &ForecastWindow, forecasts: &[&RecursiveForecast]) -> ForecastResponse {
    let days = window.days;
    let m = forecasts.len() as f64;
    let regions = (0..NUM_REGIONS)
        .map(|n| {
            let mean = |pick: fn(&RecursiveForecast) -> &Vec<Vec<f64>>| -> Vec<f64> {
                (0..days)
                    .map(|d| forecasts.iter().map(|f| pick(f)[d][n]).sum::<f64>() / m)
                    .collect()
            };
            RegionForecast {
                region: region_code(n),
                raw: mean(|f| &f.raw),
                corrected: mean(|f| &f.corrected),
                truth: window.truth.iter().map(|d| d[n]).collect(),
            }
        })
        .collect();
    ForecastResponse {
        manifest_hash: ctx.manifest_hash.clone(),
        window_start: window.start_date,
        days,
        models: forecasts.len(),
        regions,
    }
}

/// Bias-corrected ensemble-mean forecast from one window.
pub fn forecast_window(ctx: &RunContext, start: NaiveDate, days: usize, models: Option<usize>) -> Result<ForecastResponse> {
    let window = ctx.window_at(start, days)?;
    let models = models.unwrap_or(ctx.models.len());
    let forecasts = model_forecasts(ctx, models, std::slice::from_ref(&window), days)?;
    let refs: Vec<&RecursiveForecast> = forecasts.iter().collect();
    Ok(ensemble_mean_response(ctx, &window, &refs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastExport {
    pub manifest_hash: String,
    pub days: usize,
    pub models: usize,
    pub windows: Vec<ForecastResponse>,
}

/// Per-model CSV plus ensemble-mean JSON for the selected windows.
pub fn forecast_export(ctx: &RunContext, windows: &[ForecastWindow], days: usize, models: usize) -> Result<ForecastExport> {
    let forecasts = model_forecasts(ctx, models, windows, days)?;
    let floors: usize = forecasts.iter().map(|f| f.floors).sum();
    if floors > 0 {
        log::warn!("{floors} negative raw forecasts were floored at zero");
    }
    write_forecast_csv(&forecasts, csv_writer(&ctx.dir.join(FORECAST_CSV))?)?;
    let export = ForecastExport {
        manifest_hash: ctx.manifest_hash.clone(),
        days,
        models,
        windows: windows
            .iter()
            .enumerate()
            .map(|(w, window)| {
                let refs: Vec<&RecursiveForecast> = forecasts.iter().skip(w).step_by(windows.len()).collect();
                ensemble_mean_response(ctx, window, &refs)
            })
            .collect(),
    };
    write_json(&ctx.dir.join(FORECAST_FILE), &export)?;
    Ok(export)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityArtifact {
    pub manifest_hash: String,
    pub window_stride: usize,
    pub report: SensitivityReport,
}

impl Stamped for SensitivityArtifact {
    fn manifest_hash(&self) -> &str {
        &self.manifest_hash
    }
}

pub fn sensitivity(ctx: &RunContext, days: usize, models: usize, stride: usize) -> Result<SensitivityArtifact> {
    let windows = ctx.windows(days, stride)?;
    let ensemble = ctx.ensemble(models)?;
    log::info!("sensitivity sweep over {} windows x {} models", windows.len(), ensemble.len());
    let scn = Scenario::new(ensemble, &windows, ctx.factors()?, days)?;
    let report = sensitivity_sweep(&scn)?;
    let artifact = SensitivityArtifact {
        manifest_hash: ctx.manifest_hash.clone(),
        window_stride: stride,
        report,
    };
    write_json(&ctx.dir.join(SENSITIVITY_FILE), &artifact)?;
    artifact.report.write_csv(csv_writer(&ctx.dir.join(SENSITIVITY_CSV))?)?;
    Ok(artifact)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub region: String,
    pub name: String,
    pub rank: usize,
    /// The window's fitted location, or the median over windows.
    pub mu: f64,
    pub mu_normalized: f64,
    /// Normalized location per window, in window order (overall rankings only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingsResponse {
    pub manifest_hash: String,
    /// `None` for the overall ranking by median.
    pub window: Option<NaiveDate>,
    pub windows: Vec<NaiveDate>,
    pub models: usize,
    pub days: usize,
    pub regions: Vec<RankingEntry>,
}

fn region_name(code: &str) -> String {
    code.parse::<Region>().map(|r| r.name().to_string()).unwrap_or_else(|_| code.to_string())
}

pub fn rankings(art: &SensitivityArtifact, window: Option<NaiveDate>) -> Result<RankingsResponse> {
    let report = &art.report;
    let regions = match window {
        Some(start) => {
            let mut recs = report.window_records(start);
            if recs.is_empty() {
                return Err(Error::new(ErrorKind::NotFound, format!("no sensitivity results for window {start}")).with_field("window"));
            }
            recs.sort_by_key(|r| (r.rank, r.region_index));
            recs.iter()
                .map(|r| RankingEntry {
                    region: r.region.clone(),
                    name: region_name(&r.region),
                    rank: r.rank,
                    mu: r.fit.mu,
                    mu_normalized: r.mu_normalized,
                    series: None,
                })
                .collect()
        }
        None => report
            .summary
            .iter()
            .map(|s| RankingEntry {
                region: s.region.clone(),
                name: region_name(&s.region),
                rank: s.rank,
                mu: s.median_mu,
                mu_normalized: s.median_mu_normalized,
                series: Some(
                    report
                        .records
                        .iter()
                        .filter(|r| r.region_index == s.region_index)
                        .map(|r| r.mu_normalized)
                        .collect(),
                ),
            })
            .collect(),
    };
    Ok(RankingsResponse {
        manifest_hash: art.manifest_hash.clone(),
        window,
        windows: report.windows.clone(),
        models: report.models,
        days: report.days,
        regions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepArtifact {
    pub manifest_hash: String,
    pub nodes: Vec<String>,
    pub levels: Vec<f64>,
    pub max_policies: Option<usize>,
    pub sample_seed: u64,
    pub window_stride: usize,
    pub window_starts: Vec<NaiveDate>,
    pub sweep: PolicySweep,
}

impl Stamped for SweepArtifact {
    fn manifest_hash(&self) -> &str {
        &self.manifest_hash
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub nodes: Vec<Region>,
    /// Fractions in (0, 1].
    pub levels: Vec<f64>,
    pub max_policies: Option<usize>,
    pub seed: u64,
    pub models: usize,
    pub days: usize,
    pub window_stride: usize,
}

/// The most sensitive regions of the stored sensitivity ranking.
pub fn default_nodes(ctx: &RunContext) -> Result<Vec<Region>> {
    let art: SensitivityArtifact = ctx.read_artifact(SENSITIVITY_FILE)?.ok_or_else(|| {
        Error::new(
            ErrorKind::NotProvisioned,
            "no sensitivity ranking to pick policy nodes from; pass --nodes or run `aerograph sensitivity`",
        )
    })?;
    art.report
        .summary
        .iter()
        .take(DEFAULT_SWEEP_NODES)
        .map(|s| parse_region("nodes", &s.region))
        .collect()
}

/// Ensemble size for policy evaluation: 40 models, or the whole ensemble if smaller.
pub fn default_policy_models(ctx: &RunContext) -> usize {
    DEFAULT_POLICY_MODELS.min(ctx.models.len())
}

/// Checks a sweep request without running it.
pub fn validate_sweep_spec(ctx: &RunContext, spec: &SweepSpec) -> Result<()> {
    if spec.nodes.is_empty() {
        return Err(Error::invalid("nodes", "at least one region is required"));
    }
    let mut seen = spec.nodes.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != spec.nodes.len() {
        return Err(Error::invalid("nodes", "regions must be distinct"));
    }
    if spec.levels.is_empty() {
        return Err(Error::invalid("levels", "at least one level is required"));
    }
    if let Some(&bad) = spec.levels.iter().find(|&&l| !(l > 0.0 && l <= 1.0)) {
        return Err(Error::invalid("levels", format!("level {bad} is outside (0, 1]")));
    }
    if spec.max_policies == Some(0) {
        return Err(Error::invalid("max_policies", "must be at least 1"));
    }
    ctx.ensemble(spec.models)?;
    ctx.windows(spec.days, spec.window_stride)?;
    ctx.factors()?;
    Ok(())
}

/// Computes the sweep without writing anything.
pub fn compute_sweep(ctx: &RunContext, spec: &SweepSpec) -> Result<SweepArtifact> {
    validate_sweep_spec(ctx, spec)?;
    let node_idx: Vec<usize> = spec.nodes.iter().map(|r| r.index()).collect();
    let mut policies = enumerate_policies(NUM_REGIONS, &node_idx, &spec.levels)?;
    if let Some(max) = spec.max_policies {
        policies = sample_policies(policies, max, spec.seed);
    }
    let windows = ctx.windows(spec.days, spec.window_stride)?;
    let ensemble = ctx.ensemble(spec.models)?;
    log::info!(
        "policy sweep: {} policies over {} windows x {} models",
        policies.len(),
        windows.len(),
        ensemble.len()
    );
    let scn = Scenario::new(ensemble, &windows, ctx.factors()?, spec.days)?;
    let mut scored = Vec::with_capacity(policies.len());
    for p in policies {
        let reduction = avg_daily_flight_reduction(&ctx.dataset.graphs, &p.perturbation);
        let raw = if p.perturbation.is_null() {
            0.0
        } else {
            impact_between(scn.baseline(), &scn.perturbed(&p.perturbation)?)
        };
        scored.push((p, reduction, raw));
    }
    let sweep = assemble_sweep(scored, ensemble.len(), windows.len(), spec.days)?;
    Ok(SweepArtifact {
        manifest_hash: ctx.manifest_hash.clone(),
        nodes: spec.nodes.iter().map(|r| r.code().to_string()).collect(),
        levels: spec.levels.clone(),
        max_policies: spec.max_policies,
        sample_seed: spec.seed,
        window_stride: spec.window_stride,
        window_starts: windows.iter().map(|w| w.start_date).collect(),
        sweep,
    })
}

/// Runs the sweep and writes `policy_sweep.json` and `policy.csv`.
pub fn policy_sweep(ctx: &RunContext, spec: &SweepSpec) -> Result<SweepArtifact> {
    let art = compute_sweep(ctx, spec)?;
    write_json(&ctx.dir.join(SWEEP_FILE), &art)?;
    art.sweep.write_csv(csv_writer(&ctx.dir.join(SWEEP_CSV))?)?;
    Ok(art)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRequest {
    /// Region code or name to reduction fraction in [0, 1].
    #[serde(default)]
    pub reductions: BTreeMap<String, f64>,
    /// One window; the cached sweep's windows when omitted.
    pub window_start: Option<NaiveDate>,
    pub days: Option<usize>,
    pub models: Option<usize>,
}

/// Validates a region-to-fraction map. Errors name the offending entry as
/// `reductions.<key>`.
pub fn parse_reductions(map: &BTreeMap<String, f64>) -> Result<Perturbation> {
    let mut fractions = vec![0.0; NUM_REGIONS];
    let mut given = [false; NUM_REGIONS];
    for (key, &fraction) in map {
        let field = format!("reductions.{key}");
        let region = parse_region(&field, key)?;
        if !(fraction.is_finite() && (0.0..=1.0).contains(&fraction)) {
            return Err(Error::invalid(field, format!("fraction {fraction} for {key} is outside [0, 1]")));
        }
        if given[region.index()] {
            return Err(Error::invalid(field, format!("{} is given more than once", region.code())));
        }
        given[region.index()] = true;
        fractions[region.index()] = fraction;
    }
    Ok(Perturbation::new(fractions)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSeries {
    pub region: String,
    /// Mean over models and windows of the corrected forecast, per day.
    pub unperturbed: Vec<f64>,
    pub perturbed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub manifest_hash: String,
    /// Id of the same policy in the cached sweep, if it is part of it.
    pub policy_id: Option<usize>,
    pub reductions: Vec<RegionFraction>,
    pub models: usize,
    pub windows: usize,
    pub days: usize,
    pub avg_daily_flight_reduction: f64,
    pub raw_impact: f64,
    /// Raw impact divided by the cached sweep's maximum; not clamped.
    pub impact: f64,
    pub quadrant: Quadrant,
    pub series: Vec<RegionSeries>,
}

fn mean_series(f: &aerograph_core::analysis::Forecasts, node: usize, days: usize) -> Vec<f64> {
    let count = (f.len() * f[0].len()) as f64;
    (0..days)
        .map(|d| f.iter().flat_map(|m| m.iter().map(move |w| w[d][node])).sum::<f64>() / count)
        .collect()
}

/// Scores one policy against a cached sweep. With no overrides the windows,
/// models and horizon are the sweep's, so a swept policy reproduces its row.
pub fn evaluate(ctx: &RunContext, sweep: &SweepArtifact, req: &EvaluateRequest) -> Result<PolicyEvaluation> {
    let p = parse_reductions(&req.reductions)?;
    let days = req.days.unwrap_or(sweep.sweep.days);
    if days == 0 {
        return Err(Error::invalid("days", "days must be at least 1"));
    }
    let models = req.models.unwrap_or(sweep.sweep.models);
    let ensemble = ctx.ensemble(models)?;
    let windows = match req.window_start {
        Some(start) => vec![ctx.window_at(start, days)?],
        None => ctx.windows_at(&sweep.window_starts, days).map_err(|e| {
            Error::invalid("days", format!("the sweep's windows cannot be used with this horizon: {e}"))
        })?,
    };
    let scn = Scenario::new(ensemble, &windows, ctx.factors()?, days)?;
    let perturbed = scn.perturbed(&p)?;
    let raw_impact = if p.is_null() { 0.0 } else { impact_between(scn.baseline(), &perturbed) };
    let reduction = avg_daily_flight_reduction(&ctx.dataset.graphs, &p);
    let policy_id = sweep
        .sweep
        .results
        .iter()
        .find(|r| r.reductions == region_fractions(&p))
        .map(|r| r.policy_id);
    let scored = sweep.sweep.classify(policy_id.unwrap_or(0), &p, reduction, raw_impact);
    let series = REGIONS
        .iter()
        .map(|r| RegionSeries {
            region: r.code().to_string(),
            unperturbed: mean_series(scn.baseline(), r.index(), days),
            perturbed: mean_series(&perturbed, r.index(), days),
        })
        .collect();
    Ok(PolicyEvaluation {
        manifest_hash: ctx.manifest_hash.clone(),
        policy_id,
        reductions: scored.reductions,
        models: ensemble.len(),
        windows: windows.len(),
        days,
        avg_daily_flight_reduction: scored.avg_daily_flight_reduction,
        raw_impact,
        impact: scored.impact,
        quadrant: scored.quadrant,
        series,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFactor {
    pub region: String,
    pub factor: f64,
}

/// Factors recorded for the run, in region order.
pub fn factors_table(factors: &BiasFactors) -> Vec<RegionFactor> {
    factors
        .factors
        .iter()
        .enumerate()
        .map(|(i, &factor)| RegionFactor {
            region: region_code(i),
            factor,
        })
        .collect()
}
