//! Small hand-checkable models implementing `OneStepModel`.

use aerograph_core::forecast::{ForecastWindow, OneStepModel};
use aerograph_core::model::{ModelError, WindowBatch};
use aerograph_core::numerics::log10p1;
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Repeats the last day's features; never looks at the graph.
pub struct Persistence {
    pub window_len: usize,
}

impl OneStepModel for Persistence {
    fn window_len(&self) -> usize {
        self.window_len
    }

    fn predict_batch(&self, batch: &WindowBatch) -> Result<Vec<f64>, ModelError> {
        Ok(batch.features[self.window_len - 1].data().to_vec())
    }
}

/// `y_v = a x_v + b sum_u c[v][u] x_u` on the last day, with `c` the
/// mean-aggregation coefficients of that day.
pub struct LinearMix {
    pub window_len: usize,
    pub a: f64,
    pub b: f64,
}

impl OneStepModel for LinearMix {
    fn window_len(&self) -> usize {
        self.window_len
    }

    fn predict_batch(&self, batch: &WindowBatch) -> Result<Vec<f64>, ModelError> {
        let last = self.window_len - 1;
        let x = batch.features[last].data();
        let c = &batch.coeffs[last];
        let n = batch.nodes;
        let mut out = Vec::with_capacity(x.len());
        for g in 0..batch.batch {
            let xs = &x[g * n..(g + 1) * n];
            let cs = &c[g * n * n..(g + 1) * n * n];
            for v in 0..n {
                let agg: f64 = (0..n).map(|u| cs[v * n + u] * xs[u]).sum();
                out.push(self.a * xs[v] + self.b * agg);
            }
        }
        Ok(out)
    }
}

/// Random window over `nodes` regions with `days` future days. Regions in
/// `silent` have no flights in or out.
pub fn toy_window(seed: u64, nodes: usize, window_len: usize, days: usize, silent: &[usize]) -> ForecastWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = window_len + days;
    let raw_flights: Vec<Vec<f64>> = (0..total)
        .map(|_| {
            (0..nodes * nodes)
                .map(|k| {
                    let (u, v) = (k / nodes, k % nodes);
                    if u == v || silent.contains(&u) || silent.contains(&v) || rng.random_bool(0.2) {
                        0.0
                    } else {
                        rng.random_range(1..500) as f64
                    }
                })
                .collect()
        })
        .collect();
    let flights = raw_flights.iter().map(|d| d.iter().map(|&x| log10p1(x)).collect()).collect();
    let start_date = NaiveDate::from_ymd_opt(2020, 6, 1).unwrap() + chrono::Duration::days(seed as i64 % 100);
    ForecastWindow {
        start: 0,
        start_date,
        days,
        seed: (0..window_len).map(|_| (0..nodes).map(|_| rng.random_range(0.5..3.0)).collect()).collect(),
        raw_flights,
        flights,
        truth: (0..days).map(|_| (0..nodes).map(|_| rng.random_range(1.0..500.0)).collect()).collect(),
    }
}
