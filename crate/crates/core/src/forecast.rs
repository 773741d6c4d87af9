//! Recursive multi-day forecasting and per-region multiplicative bias correction.

use std::io::Write;
use std::sync::Arc;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Dataset, Region, WINDOW_DAYS};
use crate::model::{layers::neighbor_coefficients, DcsageModel, ModelError, WindowBatch};
use crate::numerics::{log10p1, pow10m1, Tensor};

/// Default recursion horizon in days.
pub const DEFAULT_HORIZON: usize = 30;
/// Added to a non-positive ensemble prediction before taking a ratio.
pub const BIAS_DELTA: f64 = 1e-9;

/// Inputs per recursion step are grouped into batches of this many windows.
const LOCKSTEP_CHUNK: usize = 64;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ForecastError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("horizon must be at least one day")]
    ZeroHorizon,
    #[error("adjacency supplied for {got} future days, {needed} needed")]
    MissingAdjacency { needed: usize, got: usize },
    #[error("seed window has {got} days, expected {expected}")]
    SeedLength { expected: usize, got: usize },
    #[error("inputs disagree on {0}")]
    Inconsistent(&'static str),
    #[error("no forecast windows")]
    NoWindows,
    #[error("bias factor for {region} is {value}, expected a finite positive number")]
    BadFactor { region: usize, value: f64 },
    #[error("export failed: {0}")]
    Export(String),
}

/// Anything that maps a batch of windows to one value per stacked node row.
pub trait OneStepModel: Sync {
    fn window_len(&self) -> usize;
    fn predict_batch(&self, batch: &WindowBatch) -> Result<Vec<f64>, ModelError>;
}

impl OneStepModel for DcsageModel {
    fn window_len(&self) -> usize {
        self.config.window_len
    }

    fn predict_batch(&self, batch: &WindowBatch) -> Result<Vec<f64>, ModelError> {
        DcsageModel::predict_batch(self, batch)
    }
}

/// A seed window plus the adjacency of every day the recursion may touch.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastInput {
    pub nodes: usize,
    /// Transformed node features of the seed days.
    pub seed: Vec<Vec<f64>>,
    /// Neighbour coefficients for the seed days followed by the future days.
    pub coeffs: Vec<Arc<[f64]>>,
}

impl ForecastInput {
    /// `adjacency` holds transformed `nodes x nodes` matrices for the seed
    /// days followed by at least one future day.
    pub fn new(seed: Vec<Vec<f64>>, adjacency: &[Vec<f64>]) -> Result<Self, ForecastError> {
        let nodes = seed.first().map(Vec::len).unwrap_or(0);
        if seed.iter().any(|d| d.len() != nodes) {
            return Err(ForecastError::Inconsistent("node count"));
        }
        let coeffs = adjacency
            .iter()
            .map(|a| neighbor_coefficients(a, nodes).map(Arc::from))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { nodes, seed, coeffs })
    }

    pub fn future_days(&self) -> usize {
        self.coeffs.len().saturating_sub(self.seed.len())
    }
}

fn check_inputs(inputs: &[ForecastInput], window_len: usize, days: usize) -> Result<usize, ForecastError> {
    if days == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    let nodes = inputs.first().map(|i| i.nodes).ok_or(ForecastError::NoWindows)?;
    for input in inputs {
        if input.nodes != nodes {
            return Err(ForecastError::Inconsistent("node count"));
        }
        if input.seed.len() != window_len {
            return Err(ForecastError::SeedLength {
                expected: window_len,
                got: input.seed.len(),
            });
        }
        if input.future_days() < days {
            return Err(ForecastError::MissingAdjacency {
                needed: days,
                got: input.future_days(),
            });
        }
    }
    Ok(nodes)
}

/// Runs the recursion for every input in lockstep: at step `k` all windows
/// are predicted as one batch. Returns `[input][day][node]` in the
/// transformed domain.
pub fn recursive_predict_many<M: OneStepModel + ?Sized>(
    model: &M,
    inputs: &[ForecastInput],
    days: usize,
) -> Result<Vec<Vec<Vec<f64>>>, ForecastError> {
    let len = model.window_len();
    let nodes = check_inputs(inputs, len, days)?;
    let chunks: Vec<&[ForecastInput]> = inputs.chunks(LOCKSTEP_CHUNK).collect();
    let results = chunks
        .par_iter()
        .map(|chunk| lockstep(model, chunk, nodes, len, days))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(results.into_iter().flatten().collect())
}

fn lockstep<M: OneStepModel + ?Sized>(
    model: &M,
    inputs: &[ForecastInput],
    nodes: usize,
    len: usize,
    days: usize,
) -> Result<Vec<Vec<Vec<f64>>>, ForecastError> {
    // buffers[i] holds the seed days followed by every prediction so far
    let mut buffers: Vec<Vec<Vec<f64>>> = inputs.iter().map(|i| i.seed.clone()).collect();
    for k in 0..days {
        let mut features = Vec::with_capacity(len);
        let mut coeffs = Vec::with_capacity(len);
        for t in 0..len {
            let mut f = Vec::with_capacity(inputs.len() * nodes);
            let mut c = Vec::with_capacity(inputs.len() * nodes * nodes);
            for (buf, input) in buffers.iter().zip(inputs) {
                f.extend_from_slice(&buf[k + t]);
                c.extend_from_slice(&input.coeffs[k + t]);
            }
            features.push(Tensor::new(vec![inputs.len() * nodes, 1], f).map_err(ModelError::from)?);
            coeffs.push(Arc::from(c));
        }
        let batch = WindowBatch {
            nodes,
            batch: inputs.len(),
            features,
            coeffs,
        };
        let pred = model.predict_batch(&batch)?;
        for (buf, p) in buffers.iter_mut().zip(pred.chunks(nodes)) {
            buf.push(p.to_vec());
        }
    }
    Ok(buffers.into_iter().map(|b| b[len..].to_vec()).collect())
}

/// `[day][node]` forecast for a single seed window.
pub fn recursive_predict<M: OneStepModel + ?Sized>(
    model: &M,
    input: &ForecastInput,
    days: usize,
) -> Result<Vec<Vec<f64>>, ForecastError> {
    Ok(recursive_predict_many(model, std::slice::from_ref(input), days)?.remove(0))
}

/// Converts to raw cases, flooring negatives at zero. Returns the number of
/// values that were floored.
pub fn to_raw(transformed: &[f64], out: &mut Vec<f64>) -> usize {
    let mut floors = 0;
    for &v in transformed {
        let r = pow10m1(v);
        if r < 0.0 {
            floors += 1;
            out.push(0.0);
        } else {
            out.push(r);
        }
    }
    floors
}

/// A window with enough retained days after it to score a `days`-day forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastWindow {
    /// Index of the first seed day in the dataset's graph list.
    pub start: usize,
    pub start_date: NaiveDate,
    pub days: usize,
    /// Transformed cases of the seed days.
    pub seed: Vec<Vec<f64>>,
    /// Raw and transformed flight matrices, seed days then future days.
    pub raw_flights: Vec<Vec<f64>>,
    pub flights: Vec<Vec<f64>>,
    /// Smoothed raw cases of the forecast days.
    pub truth: Vec<Vec<f64>>,
}

impl ForecastWindow {
    pub fn from_dataset(dataset: &Dataset, start: usize, days: usize) -> Self {
        let seed_end = start + WINDOW_DAYS;
        let graphs = &dataset.graphs[start..seed_end + days];
        Self {
            start,
            start_date: graphs[0].date,
            days,
            seed: graphs[..WINDOW_DAYS].iter().map(|g| g.cases.clone()).collect(),
            raw_flights: graphs.iter().map(|g| g.raw_flights.clone()).collect(),
            flights: graphs.iter().map(|g| g.flights.clone()).collect(),
            truth: graphs[WINDOW_DAYS..].iter().map(|g| g.smoothed_cases.clone()).collect(),
        }
    }

    /// Every window of the dataset followed by `days` consecutive days.
    pub fn all(dataset: &Dataset, days: usize) -> Vec<Self> {
        dataset
            .forecast_starts(days)
            .into_iter()
            .map(|s| Self::from_dataset(dataset, s, days))
            .collect()
    }

    pub fn input(&self) -> Result<ForecastInput, ForecastError> {
        ForecastInput::new(self.seed.clone(), &self.flights)
    }
}

/// Raw-domain ensemble forecasts: `[model][window][day][node]`, plus the
/// number of negative values floored at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleForecast {
    pub raw: Vec<Vec<Vec<Vec<f64>>>>,
    pub floors: usize,
}

impl EnsembleForecast {
    pub fn models(&self) -> usize {
        self.raw.len()
    }

    /// Ensemble mean per `[window][day][node]`.
    pub fn mean(&self) -> Vec<Vec<Vec<f64>>> {
        let m = self.raw.len() as f64;
        let mut out = self.raw[0].clone();
        for model in &self.raw[1..] {
            for (ow, w) in out.iter_mut().zip(model) {
                for (od, d) in ow.iter_mut().zip(w) {
                    for (o, v) in od.iter_mut().zip(d) {
                        *o += v;
                    }
                }
            }
        }
        for v in out.iter_mut().flatten().flatten() {
            *v /= m;
        }
        out
    }
}

pub fn ensemble_forecast<M: OneStepModel>(
    models: &[M],
    inputs: &[ForecastInput],
    days: usize,
) -> Result<EnsembleForecast, ForecastError> {
    if models.is_empty() {
        return Err(ForecastError::Inconsistent("ensemble size (empty)"));
    }
    let mut raw = Vec::with_capacity(models.len());
    let mut floors = 0;
    for model in models {
        let transformed = recursive_predict_many(model, inputs, days)?;
        raw.push(
            transformed
                .into_iter()
                .map(|w| {
                    w.into_iter()
                        .map(|d| {
                            let mut out = Vec::with_capacity(d.len());
                            floors += to_raw(&d, &mut out);
                            out
                        })
                        .collect()
                })
                .collect(),
        );
    }
    Ok(EnsembleForecast { raw, floors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProvenance {
    pub ensemble_size: usize,
    pub windows: usize,
    pub days: usize,
    /// Ratio terms whose prediction was non-positive and got `BIAS_DELTA` added.
    pub guarded_terms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFactors {
    pub factors: Vec<f64>,
    pub provenance: BiasProvenance,
}

impl BiasFactors {
    pub fn identity(nodes: usize) -> Self {
        Self {
            factors: vec![1.0; nodes],
            provenance: BiasProvenance {
                ensemble_size: 0,
                windows: 0,
                days: 0,
                guarded_terms: 0,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        for (region, &value) in self.factors.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(ForecastError::BadFactor { region, value });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("factors serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ForecastError> {
        let f: Self = serde_json::from_str(text).map_err(|e| ForecastError::Export(e.to_string()))?;
        f.validate()?;
        Ok(f)
    }

    /// `region,code,factor` table.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ForecastError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| ForecastError::Export(e.to_string());
        w.write_record(["region", "code", "factor"]).map_err(err)?;
        for (i, f) in self.factors.iter().enumerate() {
            let (name, code) = Region::from_index(i)
                .map(|r| (r.name().to_string(), r.code().to_string()))
                .unwrap_or_else(|| (i.to_string(), i.to_string()));
            w.write_record([name, code, f.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| ForecastError::Export(e.to_string()))
    }
}

/// Per region, the mean over windows and days of `truth / prediction`.
/// Both arguments are `[window][day][node]` in the raw domain.
pub fn bias_factors_from(
    mean_prediction: &[Vec<Vec<f64>>],
    truth: &[Vec<Vec<f64>>],
    ensemble_size: usize,
) -> Result<BiasFactors, ForecastError> {
    let windows = mean_prediction.len();
    if windows == 0 || truth.len() != windows {
        return Err(ForecastError::NoWindows);
    }
    let days = mean_prediction[0].len();
    let nodes = mean_prediction[0].first().map(Vec::len).unwrap_or(0);
    let mut guarded = 0;
    let mut factors = vec![0.0; nodes];
    for (pw, tw) in mean_prediction.iter().zip(truth) {
        if pw.len() != days || tw.len() != days {
            return Err(ForecastError::Inconsistent("forecast horizon"));
        }
        let mut window_sum = vec![0.0; nodes];
        for (pd, td) in pw.iter().zip(tw) {
            if pd.len() != nodes || td.len() != nodes {
                return Err(ForecastError::Inconsistent("node count"));
            }
            for n in 0..nodes {
                let mut p = pd[n];
                if p <= 0.0 {
                    p += BIAS_DELTA;
                    guarded += 1;
                }
                window_sum[n] += td[n] / p;
            }
        }
        for (f, s) in factors.iter_mut().zip(window_sum) {
            *f += s / days as f64;
        }
    }
    for f in factors.iter_mut() {
        *f /= windows as f64;
    }
    if guarded > 0 {
        log::warn!("{guarded} bias ratio terms had a non-positive prediction and were guarded");
    }
    Ok(BiasFactors {
        factors,
        provenance: BiasProvenance {
            ensemble_size,
            windows,
            days,
            guarded_terms: guarded,
        },
    })
}

pub fn compute_bias_factors<M: OneStepModel>(
    models: &[M],
    windows: &[ForecastWindow],
    days: usize,
) -> Result<BiasFactors, ForecastError> {
    let inputs = windows.iter().map(ForecastWindow::input).collect::<Result<Vec<_>, _>>()?;
    let forecast = ensemble_forecast(models, &inputs, days)?;
    let truth: Vec<Vec<Vec<f64>>> = windows.iter().map(|w| w.truth[..days].to_vec()).collect();
    bias_factors_from(&forecast.mean(), &truth, models.len())
}

/// Multiplies each region's raw values by its factor.
pub fn apply_bias(raw: &[Vec<f64>], factors: &BiasFactors) -> Vec<Vec<f64>> {
    raw.iter()
        .map(|d| d.iter().zip(&factors.factors).map(|(v, f)| v * f).collect())
        .collect()
}

/// One model's forecast for one window, raw and bias-corrected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursiveForecast {
    pub window_start: NaiveDate,
    pub model_index: usize,
    /// `[day][node]` in the transformed domain, as produced by the model.
    pub transformed: Vec<Vec<f64>>,
    /// `[day][node]` raw cases, floored at zero.
    pub raw: Vec<Vec<f64>>,
    pub corrected: Vec<Vec<f64>>,
    pub floors: usize,
}

impl RecursiveForecast {
    pub fn new(window_start: NaiveDate, model_index: usize, transformed: Vec<Vec<f64>>, factors: &BiasFactors) -> Self {
        let mut floors = 0;
        let raw: Vec<Vec<f64>> = transformed
            .iter()
            .map(|d| {
                let mut out = Vec::with_capacity(d.len());
                floors += to_raw(d, &mut out);
                out
            })
            .collect();
        let corrected = apply_bias(&raw, factors);
        Self {
            window_start,
            model_index,
            transformed,
            raw,
            corrected,
            floors,
        }
    }

    /// Corrected values mapped back through `log10(x + 1)`.
    pub fn corrected_transformed(&self) -> Vec<Vec<f64>> {
        self.corrected.iter().map(|d| d.iter().map(|&v| log10p1(v)).collect()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub window_start: NaiveDate,
    pub model_index: usize,
    pub day: usize,
    pub region: String,
    pub raw_prediction: f64,
    pub corrected_prediction: f64,
}

pub fn forecast_rows(forecasts: &[RecursiveForecast]) -> Vec<ForecastRow> {
    let mut rows = Vec::new();
    for f in forecasts {
        for (d, (raw, corr)) in f.raw.iter().zip(&f.corrected).enumerate() {
            for (n, (r, c)) in raw.iter().zip(corr).enumerate() {
                rows.push(ForecastRow {
                    window_start: f.window_start,
                    model_index: f.model_index,
                    day: d + 1,
                    region: Region::from_index(n).map(|r| r.code().to_string()).unwrap_or_else(|| n.to_string()),
                    raw_prediction: *r,
                    corrected_prediction: *c,
                });
            }
        }
    }
    rows
}

pub fn write_forecast_csv<W: Write>(forecasts: &[RecursiveForecast], out: W) -> Result<(), ForecastError> {
    let mut w = csv::Writer::from_writer(out);
    for row in forecast_rows(forecasts) {
        w.serialize(row).map_err(|e| ForecastError::Export(e.to_string()))?;
    }
    w.flush().map_err(|e| ForecastError::Export(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DayInput, ModelConfig};

    /// Predicts the last input day unchanged.
    struct Echo;

    impl OneStepModel for Echo {
        fn window_len(&self) -> usize {
            7
        }
        fn predict_batch(&self, batch: &WindowBatch) -> Result<Vec<f64>, ModelError> {
            Ok(batch.features[6].data().to_vec())
        }
    }

    fn raw_input(seed: u64, nodes: usize, future: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let seed_days = (0..7).map(|_| (0..nodes).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
        let adj = (0..7 + future)
            .map(|_| {
                (0..nodes * nodes)
                    .map(|i| if i % (nodes + 1) == 0 { 0.0 } else { rng.random_range(0.0..3.0) })
                    .collect()
            })
            .collect();
        (seed_days, adj)
    }

    fn input(seed: u64, nodes: usize, future: usize) -> ForecastInput {
        let (s, a) = raw_input(seed, nodes, future);
        ForecastInput::new(s, &a).unwrap()
    }

    #[test]
    fn one_day_matches_forward() {
        let m = DcsageModel::init(ModelConfig::default(), 5).unwrap();
        let (seed, adj) = raw_input(1, 10, 1);
        let days: Vec<DayInput> = (0..7).map(|t| DayInput::new(seed[t].clone(), adj[t].clone())).collect();
        let inp = ForecastInput::new(seed, &adj).unwrap();
        assert_eq!(recursive_predict(&m, &inp, 1).unwrap()[0], m.forward(&days).unwrap());
    }

    #[test]
    fn echo_is_a_fixed_point() {
        let inp = input(2, 4, 5);
        let f = recursive_predict(&Echo, &inp, 5).unwrap();
        for d in f {
            assert_eq!(d, inp.seed[6]);
        }
    }

    #[test]
    fn three_days_match_manual_unrolling() {
        let m = DcsageModel::init(ModelConfig::default(), 9).unwrap();
        let inp = input(3, 10, 3);
        let mut buf = inp.seed.clone();
        let mut manual = Vec::new();
        for k in 0..3 {
            let batch = WindowBatch {
                nodes: 10,
                batch: 1,
                features: buf[k..k + 7].iter().map(|d| Tensor::column(d)).collect(),
                coeffs: inp.coeffs[k..k + 7].to_vec(),
            };
            let p = m.predict_batch(&batch).unwrap();
            buf.push(p.clone());
            manual.push(p);
        }
        assert_eq!(recursive_predict(&m, &inp, 3).unwrap(), manual);
    }

    #[test]
    fn lockstep_equals_individual() {
        let m = DcsageModel::init(ModelConfig::default(), 4).unwrap();
        let inputs: Vec<_> = (0..70).map(|s| input(s, 10, 4)).collect();
        let all = recursive_predict_many(&m, &inputs, 4).unwrap();
        for i in [0, 33, 69] {
            assert_eq!(all[i], recursive_predict(&m, &inputs[i], 4).unwrap());
        }
    }

    #[test]
    fn missing_adjacency_is_an_error() {
        let inp = input(5, 4, 2);
        assert_eq!(
            recursive_predict(&Echo, &inp, 3).unwrap_err(),
            ForecastError::MissingAdjacency { needed: 3, got: 2 }
        );
        assert_eq!(recursive_predict(&Echo, &inp, 0).unwrap_err(), ForecastError::ZeroHorizon);
    }

    #[test]
    fn perfect_ensemble_gives_unit_factors() {
        let truth = vec![vec![vec![3.0, 4.0], vec![5.0, 1.0]]; 3];
        let f = bias_factors_from(&truth, &truth, 1).unwrap();
        assert_eq!(f.factors, vec![1.0, 1.0]);
        assert_eq!(f.provenance.guarded_terms, 0);
    }

    #[test]
    fn two_windows_average_ratios() {
        // ratios 0.5 and 1.5 for the single region
        let pred = vec![vec![vec![2.0]], vec![vec![2.0]]];
        let truth = vec![vec![vec![1.0]], vec![vec![3.0]]];
        assert_eq!(bias_factors_from(&pred, &truth, 1).unwrap().factors, vec![1.0]);
    }

    #[test]
    fn zero_prediction_is_guarded() {
        let pred = vec![vec![vec![0.0, 1.0]]];
        let truth = vec![vec![vec![1e-9, 1.0]]];
        let f = bias_factors_from(&pred, &truth, 1).unwrap();
        assert_eq!(f.provenance.guarded_terms, 1);
        assert!((f.factors[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bias_application() {
        let raw = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let ones = BiasFactors::identity(3);
        assert_eq!(apply_bias(&raw, &ones), raw);
        let mut two = BiasFactors::identity(3);
        two.factors[1] = 2.0;
        let out = apply_bias(&raw, &two);
        assert_eq!(out, vec![vec![1.0, 4.0, 3.0], vec![4.0, 10.0, 6.0]]);
        let mut inv = BiasFactors::identity(3);
        inv.factors = vec![1.0 / 0.37, 0.5, 1.0 / 3.3];
        let mut b = BiasFactors::identity(3);
        b.factors = vec![0.37, 2.0, 3.3];
        for (x, y) in apply_bias(&apply_bias(&raw, &b), &inv).iter().flatten().zip(raw.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_predictions_floor_at_zero() {
        let f = RecursiveForecast::new(
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            0,
            vec![vec![-0.5, 1.0]],
            &BiasFactors::identity(2),
        );
        assert_eq!(f.floors, 1);
        assert_eq!(f.raw[0][0], 0.0);
        assert!((f.raw[0][1] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn factors_json_round_trip() {
        let mut b = BiasFactors::identity(10);
        b.factors[2] = 0.647;
        assert_eq!(BiasFactors::from_json(&b.to_json()).unwrap(), b);
        b.factors[0] = -1.0;
        assert!(BiasFactors::from_json(&b.to_json()).is_err());
    }
}
