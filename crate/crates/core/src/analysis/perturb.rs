use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::dataio::{DailyGraph, Region};
use crate::forecast::{ForecastError, ForecastInput, ForecastWindow};
use crate::numerics::log10p1;

/// Per-region reduction fractions applied to raw flight counts on every
/// edge touching the region. Edge `(u, v)` is scaled by `(1 - r_u)(1 - r_v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    fractions: Vec<f64>,
}

impl Perturbation {
    pub fn none(nodes: usize) -> Self {
        Self {
            fractions: vec![0.0; nodes],
        }
    }

    pub fn new(fractions: Vec<f64>) -> Result<Self, AnalysisError> {
        for (region, &fraction) in fractions.iter().enumerate() {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(AnalysisError::BadFraction { region, fraction });
            }
        }
        Ok(Self { fractions })
    }

    /// Full isolation of one region.
    pub fn isolate(nodes: usize, region: usize) -> Self {
        let mut p = Self::none(nodes);
        p.fractions[region] = 1.0;
        p
    }

    pub fn from_regions(pairs: &[(Region, f64)]) -> Result<Self, AnalysisError> {
        let mut fractions = vec![0.0; crate::dataio::NUM_REGIONS];
        for &(r, f) in pairs {
            fractions[r.index()] = f;
        }
        Self::new(fractions)
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn nodes(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_null(&self) -> bool {
        self.fractions.iter().all(|&f| f == 0.0)
    }

    pub fn multiplier(&self, u: usize, v: usize) -> f64 {
        (1.0 - self.fractions[u]) * (1.0 - self.fractions[v])
    }

    /// Scales a raw `nodes x nodes` flight matrix.
    pub fn apply_raw(&self, raw: &[f64]) -> Vec<f64> {
        let n = self.nodes();
        raw.iter()
            .enumerate()
            .map(|(i, &x)| x * self.multiplier(i / n, i % n))
            .collect()
    }

    /// Transformed matrix after perturbation. Entries whose multiplier is 1
    /// keep the stored transformed value bit for bit.
    pub fn apply_transformed(&self, raw: &[f64], transformed: &[f64]) -> Vec<f64> {
        let n = self.nodes();
        raw.iter()
            .zip(transformed)
            .enumerate()
            .map(|(i, (&x, &t))| {
                let m = self.multiplier(i / n, i % n);
                if m == 1.0 {
                    t
                } else {
                    log10p1(x * m)
                }
            })
            .collect()
    }

    /// Raw flights removed from one day's matrix.
    pub fn flights_removed(&self, raw: &[f64]) -> f64 {
        let n = self.nodes();
        raw.iter()
            .enumerate()
            .map(|(i, &x)| x * (1.0 - self.multiplier(i / n, i % n)))
            .sum()
    }

    pub fn perturb_graph(&self, g: &DailyGraph) -> DailyGraph {
        DailyGraph {
            flights: self.apply_transformed(&g.raw_flights, &g.flights),
            raw_flights: self.apply_raw(&g.raw_flights),
            ..g.clone()
        }
    }

    /// Label like `WE:0.75;NA:0.5`, listing only non-zero fractions.
    pub fn label(&self) -> String {
        self.fractions
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != 0.0)
            .map(|(i, f)| {
                let code = Region::from_index(i).map(|r| r.code().to_string()).unwrap_or_else(|| i.to_string());
                format!("{code}:{f}")
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

pub fn perturb_adjacency(graphs: &[DailyGraph], p: &Perturbation) -> Vec<DailyGraph> {
    graphs.iter().map(|g| p.perturb_graph(g)).collect()
}

/// Mean over days of the raw flights a perturbation removes.
pub fn avg_daily_flight_reduction(graphs: &[DailyGraph], p: &Perturbation) -> f64 {
    if graphs.is_empty() {
        return 0.0;
    }
    graphs.iter().map(|g| p.flights_removed(&g.raw_flights)).sum::<f64>() / graphs.len() as f64
}

impl ForecastWindow {
    /// Forecast input with the perturbation held over seed and future days.
    pub fn perturbed_input(&self, p: &Perturbation) -> Result<ForecastInput, ForecastError> {
        if p.is_null() {
            return self.input();
        }
        let flights: Vec<Vec<f64>> = self
            .raw_flights
            .iter()
            .zip(&self.flights)
            .map(|(raw, t)| p.apply_transformed(raw, t))
            .collect();
        ForecastInput::new(self.seed.clone(), &flights)
    }
}
