use serde::{Deserialize, Serialize};

use super::AnalysisError;

fn check(x: &[f64], y: &[f64]) -> Result<(), AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(AnalysisError::TooFewSamples { needed: 3, got: x.len() });
    }
    Ok(())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    check(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ascending ranks, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    check(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// `y = a * x^b` fitted by least squares in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub a: f64,
    pub b: f64,
    /// Pearson correlation between fitted and observed `y`.
    pub r_fit: f64,
}

impl PowerLaw {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * x.powf(self.b)
    }
}

pub fn power_law_fit(x: &[f64], y: &[f64]) -> Result<PowerLaw, AnalysisError> {
    check(x, y)?;
    if x.iter().chain(y).any(|&v| v.is_nan() || v <= 0.0) {
        return Err(AnalysisError::NonPositive);
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in lx.iter().zip(&ly) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    let b = sxy / sxx;
    let a = (my - b * mx).exp();
    let fit = PowerLaw { a, b, r_fit: 0.0 };
    let fitted: Vec<f64> = x.iter().map(|&v| fit.eval(v)).collect();
    Ok(PowerLaw {
        r_fit: pearson(&fitted, y)?,
        ..fit
    })
}
