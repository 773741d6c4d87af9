use super::{AnalysisError, Perturbation};
use crate::forecast::{recursive_predict_many, to_raw, BiasFactors, ForecastInput, ForecastWindow, OneStepModel};

/// `[model][window][day][node]` bias-corrected raw forecasts.
pub type Forecasts = Vec<Vec<Vec<Vec<f64>>>>;

/// Frozen ensemble, windows and factors, with the unperturbed forecasts
/// computed once and reused for every perturbation.
pub struct Scenario<'a, M: OneStepModel> {
    pub models: &'a [M],
    pub windows: &'a [ForecastWindow],
    pub factors: &'a BiasFactors,
    pub days: usize,
    base: Forecasts,
}

impl<'a, M: OneStepModel> Scenario<'a, M> {
    pub fn new(models: &'a [M], windows: &'a [ForecastWindow], factors: &'a BiasFactors, days: usize) -> Result<Self, AnalysisError> {
        if models.is_empty() {
            return Err(AnalysisError::EmptyEnsemble);
        }
        if windows.is_empty() {
            return Err(AnalysisError::NoWindows);
        }
        factors.validate()?;
        let mut s = Self {
            models,
            windows,
            factors,
            days,
            base: Vec::new(),
        };
        let inputs = windows.iter().map(ForecastWindow::input).collect::<Result<Vec<_>, _>>()?;
        s.base = s.run(&inputs)?;
        Ok(s)
    }

    pub fn nodes(&self) -> usize {
        self.factors.factors.len()
    }

    pub fn baseline(&self) -> &Forecasts {
        &self.base
    }

    fn run(&self, inputs: &[ForecastInput]) -> Result<Forecasts, AnalysisError> {
        let mut out = Vec::with_capacity(self.models.len());
        for model in self.models {
            let transformed = recursive_predict_many(model, inputs, self.days)?;
            out.push(
                transformed
                    .into_iter()
                    .map(|w| {
                        w.into_iter()
                            .map(|d| {
                                let mut raw = Vec::with_capacity(d.len());
                                to_raw(&d, &mut raw);
                                raw.iter().zip(&self.factors.factors).map(|(v, f)| v * f).collect()
                            })
                            .collect()
                    })
                    .collect(),
            );
        }
        Ok(out)
    }

    /// Forecasts with the perturbation applied to every seed and future day.
    pub fn perturbed(&self, p: &Perturbation) -> Result<Forecasts, AnalysisError> {
        if p.nodes() != self.nodes() {
            return Err(AnalysisError::LengthMismatch(p.nodes(), self.nodes()));
        }
        if p.is_null() {
            return Ok(self.base.clone());
        }
        let inputs = self
            .windows
            .iter()
            .map(|w| w.perturbed_input(p))
            .collect::<Result<Vec<_>, _>>()?;
        self.run(&inputs)
    }
}

/// Region totals per day.
pub fn global_series(forecast: &[Vec<f64>]) -> Vec<f64> {
    forecast.iter().map(|d| d.iter().sum()).collect()
}

/// Ensemble mean `[window][day][node]`.
pub fn ensemble_mean(f: &Forecasts) -> Vec<Vec<Vec<f64>>> {
    let m = f.len() as f64;
    let mut out = f[0].clone();
    for model in &f[1..] {
        for (o, v) in out.iter_mut().flatten().flatten().zip(model.iter().flatten().flatten()) {
            *o += v;
        }
    }
    for o in out.iter_mut().flatten().flatten() {
        *o /= m;
    }
    out
}
