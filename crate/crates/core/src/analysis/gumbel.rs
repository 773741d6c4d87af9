use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::AnalysisError;

const TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 100;

/// Right-tailed (maximum) Gumbel fit. `beta` is `None` for degenerate samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelFit {
    pub mu: f64,
    pub beta: Option<f64>,
    pub degenerate: bool,
    pub iterations: usize,
}

impl GumbelFit {
    fn degenerate(mu: f64) -> Self {
        Self {
            mu,
            beta: None,
            degenerate: true,
            iterations: 0,
        }
    }
}

/// Maximum-likelihood fit. The scale solves
/// `beta = mean(x) - sum(x e^{-x/beta}) / sum(e^{-x/beta})` by Newton's method
/// from the moments estimate; the location follows in closed form.
pub fn fit_gumbel(samples: &[f64]) -> Result<GumbelFit, AnalysisError> {
    let n = samples.len();
    if n == 0 {
        return Err(AnalysisError::TooFewSamples { needed: 1, got: 0 });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if samples.iter().all(|&v| v == samples[0]) {
        return Ok(GumbelFit::degenerate(samples[0]));
    }
    if n < 3 {
        // too few points for a likelihood fit; report the sample mean
        return Ok(GumbelFit::degenerate(mean));
    }
    // centred values keep the exponentials well scaled
    let y: Vec<f64> = samples.iter().map(|v| v - mean).collect();
    let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let var = y.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    let mut beta = var.sqrt() * 6f64.sqrt() / PI;

    let sums = |beta: f64| {
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for &v in &y {
            let w = (-(v - y_min) / beta).exp();
            a += w;
            b += v * w;
            c += v * v * w;
        }
        (a, b, c)
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = f64::NAN;
    for it in 1..=MAX_ITERATIONS {
        iterations = it;
        let (a, b, c) = sums(beta);
        let g = beta + b / a;
        let weighted_var = c / a - (b / a) * (b / a);
        let dg = 1.0 + weighted_var / (beta * beta);
        let mut step = g / dg;
        while beta - step <= 0.0 {
            step *= 0.5;
        }
        beta -= step;
        last_step = step;
        if step.abs() <= TOLERANCE * beta.max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged || !beta.is_finite() {
        return Err(AnalysisError::NoConvergence {
            iterations,
            beta,
            last_step,
        });
    }
    let (a, _, _) = sums(beta);
    let mu = mean + y_min - beta * (a / n as f64).ln();
    Ok(GumbelFit {
        mu,
        beta: Some(beta),
        degenerate: false,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Gumbel};

    fn draw(mu: f64, beta: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Gumbel::new(mu, beta).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn recovers_location() {
        let f = fit_gumbel(&draw(2.0, 0.5, 10_000, 1)).unwrap();
        assert!((1.97..=2.03).contains(&f.mu), "{f:?}");
    }

    #[test]
    fn recovers_scale() {
        let f = fit_gumbel(&draw(0.0, 1.0, 10_000, 2)).unwrap();
        let beta = f.beta.unwrap();
        assert!((0.96..=1.04).contains(&beta), "{f:?}");
    }

    #[test]
    fn stationarity_holds_at_solution() {
        let x = draw(5.0, 2.0, 500, 3);
        let f = fit_gumbel(&x).unwrap();
        let beta = f.beta.unwrap();
        let w: Vec<f64> = x.iter().map(|v| (-v / beta).exp()).collect();
        let sw: f64 = w.iter().sum();
        let swx: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        let xbar = x.iter().sum::<f64>() / x.len() as f64;
        assert!((beta - (xbar - swx / sw)).abs() < 1e-8);
        let mu = -beta * (sw / x.len() as f64).ln();
        assert!((mu - f.mu).abs() < 1e-8);
    }

    #[test]
    fn constant_samples_are_degenerate() {
        let f = fit_gumbel(&[7.0; 12]).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.mu, 7.0);
        assert_eq!(f.beta, None);
    }

    #[test]
    fn tiny_samples_fall_back_to_mean() {
        let f = fit_gumbel(&[1.0, 3.0]).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.mu, 2.0);
    }
}
