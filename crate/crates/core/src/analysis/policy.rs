use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{global_series, Forecasts};
use super::stats::median;
use super::{avg_daily_flight_reduction, AnalysisError, Perturbation, Scenario};
use crate::dataio::{DailyGraph, Region};
use crate::forecast::OneStepModel;

/// Reduction levels used when none are given.
pub const DEFAULT_LEVELS: [f64; 3] = [0.25, 0.5, 0.75];
/// Models used for policy evaluation when not overridden.
pub const DEFAULT_POLICY_MODELS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub id: usize,
    pub perturbation: Perturbation,
}

/// Every assignment of `{0} ∪ levels` to the regions in `node_set`, except
/// the all-zero one: `(levels + 1)^k - 1` policies, ids from 1. The first
/// listed region varies slowest.
pub fn enumerate_policies(nodes: usize, node_set: &[usize], levels: &[f64]) -> Result<Vec<Policy>, AnalysisError> {
    if node_set.is_empty() {
        return Err(AnalysisError::EmptyNodeSet);
    }
    if let Some(&bad) = node_set.iter().find(|&&n| n >= nodes) {
        return Err(AnalysisError::UnknownRegion(bad));
    }
    let mut choices = vec![0.0];
    choices.extend_from_slice(levels);
    for (region, &fraction) in levels.iter().enumerate() {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(AnalysisError::BadFraction { region, fraction });
        }
    }
    let base = choices.len();
    let total = base.checked_pow(node_set.len() as u32).ok_or(AnalysisError::TooManyPolicies)?;
    let mut out = Vec::with_capacity(total - 1);
    for code in 1..total {
        let mut fractions = vec![0.0; nodes];
        let mut rest = code;
        for &n in node_set.iter().rev() {
            fractions[n] = choices[rest % base];
            rest /= base;
        }
        out.push(Policy {
            id: code,
            perturbation: Perturbation::new(fractions)?,
        });
    }
    Ok(out)
}

/// Deterministic subset of at most `max` policies, kept in enumeration order.
pub fn sample_policies(policies: Vec<Policy>, max: usize, seed: u64) -> Vec<Policy> {
    if policies.len() <= max {
        return policies;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, policies.len(), max).into_vec();
    keep.sort_unstable();
    let mut it = keep.into_iter().peekable();
    policies
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            if it.peek() == Some(&i) {
                it.next();
                Some(p)
            } else {
                None
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrant {
    /// High reduction, high impact.
    Q1,
    /// Low reduction, high impact.
    Q2,
    /// Low reduction, low impact.
    Q3,
    /// High reduction, low impact.
    Q4,
}

pub fn quadrant(reduction: f64, impact: f64, median_reduction: f64, median_impact: f64) -> Quadrant {
    match (reduction >= median_reduction, impact >= median_impact) {
        (true, true) => Quadrant::Q1,
        (false, true) => Quadrant::Q2,
        (false, false) => Quadrant::Q3,
        (true, false) => Quadrant::Q4,
    }
}

/// Mean over windows of the mean over models of `sum_d |perturbed - baseline|`
/// on region-summed, bias-corrected raw forecasts.
pub fn policy_impact<M: OneStepModel>(scn: &Scenario<M>, p: &Perturbation) -> Result<f64, AnalysisError> {
    if p.is_null() {
        return Ok(0.0);
    }
    Ok(impact_between(scn.baseline(), &scn.perturbed(p)?))
}

/// The impact of already computed `[model][window][day][node]` forecasts.
pub fn impact_between(baseline: &Forecasts, perturbed: &Forecasts) -> f64 {
    let windows = baseline.first().map(Vec::len).unwrap_or(0);
    let models = baseline.len() as f64;
    let mut total = 0.0;
    for w in 0..windows {
        let mut per_window = 0.0;
        for (base, fc) in baseline.iter().zip(perturbed) {
            let (b, q) = (global_series(&base[w]), global_series(&fc[w]));
            per_window += b.iter().zip(&q).map(|(x, y)| (y - x).abs()).sum::<f64>();
        }
        total += per_window / models;
    }
    total / windows as f64
}

/// Mean over windows, models and days of the signed change in global cases
/// (baseline minus perturbed).
pub fn fidelity<M: OneStepModel>(scn: &Scenario<M>, p: &Perturbation) -> Result<f64, AnalysisError> {
    let pert = scn.perturbed(p)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (base, fc) in scn.baseline().iter().zip(&pert) {
        for (bw, pw) in base.iter().zip(fc) {
            let (b, q) = (global_series(bw), global_series(pw));
            total += b.iter().zip(&q).map(|(x, y)| x - y).sum::<f64>() / b.len() as f64;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFraction {
    pub region: String,
    pub fraction: f64,
}

pub fn region_fractions(p: &Perturbation) -> Vec<RegionFraction> {
    p.fractions()
        .iter()
        .enumerate()
        .filter(|(_, &f)| f != 0.0)
        .map(|(i, &fraction)| RegionFraction {
            region: Region::from_index(i).map(|r| r.code().to_string()).unwrap_or_else(|| i.to_string()),
            fraction,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy_id: usize,
    pub reductions: Vec<RegionFraction>,
    pub avg_daily_flight_reduction: f64,
    pub raw_impact: f64,
    /// Raw impact divided by the sweep maximum.
    pub impact: f64,
    pub quadrant: Quadrant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySweep {
    pub models: usize,
    pub windows: usize,
    pub days: usize,
    pub max_raw_impact: f64,
    pub median_reduction: f64,
    pub median_impact: f64,
    pub results: Vec<PolicyResult>,
}

impl PolicySweep {
    pub fn normalize(&self, raw_impact: f64) -> f64 {
        if self.max_raw_impact > 0.0 {
            raw_impact / self.max_raw_impact
        } else {
            0.0
        }
    }

    /// Scores a policy against this sweep's maximum and medians.
    pub fn classify(&self, policy_id: usize, p: &Perturbation, reduction: f64, raw_impact: f64) -> PolicyResult {
        let impact = self.normalize(raw_impact);
        PolicyResult {
            policy_id,
            reductions: region_fractions(p),
            avg_daily_flight_reduction: reduction,
            raw_impact,
            impact,
            quadrant: quadrant(reduction, impact, self.median_reduction, self.median_impact),
        }
    }

    /// `policy_id,reductions,avg_daily_flight_reduction,impact,quadrant`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| AnalysisError::Export(e.to_string());
        w.write_record(["policy_id", "reductions", "avg_daily_flight_reduction", "impact", "quadrant"])
            .map_err(err)?;
        for r in &self.results {
            let label = r
                .reductions
                .iter()
                .map(|f| format!("{}:{}", f.region, f.fraction))
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                r.policy_id.to_string(),
                label,
                r.avg_daily_flight_reduction.to_string(),
                r.impact.to_string(),
                format!("{:?}", r.quadrant),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| AnalysisError::Export(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes")
    }
}

/// Builds a sweep from `(policy, reduction, raw impact)` triples.
pub fn assemble_sweep(
    scored: Vec<(Policy, f64, f64)>,
    models: usize,
    windows: usize,
    days: usize,
) -> Result<PolicySweep, AnalysisError> {
    if scored.is_empty() {
        return Err(AnalysisError::EmptyNodeSet);
    }
    let max_raw_impact = scored.iter().map(|s| s.2).fold(0.0, f64::max);
    let mut sweep = PolicySweep {
        models,
        windows,
        days,
        max_raw_impact,
        median_reduction: median(&scored.iter().map(|s| s.1).collect::<Vec<_>>()),
        median_impact: 0.0,
        results: Vec::new(),
    };
    sweep.median_impact = median(&scored.iter().map(|s| sweep.normalize(s.2)).collect::<Vec<_>>());
    sweep.results = scored
        .iter()
        .map(|(p, red, raw)| sweep.classify(p.id, &p.perturbation, *red, *raw))
        .collect();
    Ok(sweep)
}

pub fn policy_sweep<M: OneStepModel>(
    scn: &Scenario<M>,
    graphs: &[DailyGraph],
    policies: Vec<Policy>,
) -> Result<PolicySweep, AnalysisError> {
    let mut scored = Vec::with_capacity(policies.len());
    for p in policies {
        let reduction = avg_daily_flight_reduction(graphs, &p.perturbation);
        let raw = policy_impact(scn, &p.perturbation)?;
        scored.push((p, reduction, raw));
    }
    assemble_sweep(scored, scn.models.len(), scn.windows.len(), scn.days)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_policies(10, &[6], &DEFAULT_LEVELS).unwrap().len(), 3);
        assert_eq!(enumerate_policies(10, &[6, 0], &DEFAULT_LEVELS).unwrap().len(), 15);
        let five = enumerate_policies(10, &[6, 0, 4, 5, 9], &DEFAULT_LEVELS).unwrap();
        assert_eq!(five.len(), 1023);
        assert!(five.iter().all(|p| !p.perturbation.is_null()));
        let mut labels: Vec<String> = five.iter().map(|p| p.perturbation.label()).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 1023);
    }

    #[test]
    fn enumeration_rejects_bad_input() {
        assert_eq!(enumerate_policies(10, &[], &DEFAULT_LEVELS).unwrap_err(), AnalysisError::EmptyNodeSet);
        assert!(enumerate_policies(10, &[11], &DEFAULT_LEVELS).is_err());
        assert!(enumerate_policies(10, &[1], &[1.5]).is_err());
    }

    #[test]
    fn sampling_is_deterministic_subset() {
        let all = enumerate_policies(10, &[0, 1, 2, 3], &DEFAULT_LEVELS).unwrap();
        let a = sample_policies(all.clone(), 20, 5);
        assert_eq!(a, sample_policies(all.clone(), 20, 5));
        assert_eq!(a.len(), 20);
        assert!(a.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(sample_policies(all.clone(), 1000, 5).len(), all.len());
    }

    #[test]
    fn quadrants_follow_medians() {
        assert_eq!(quadrant(2.0, 0.6, 1.0, 0.5), Quadrant::Q1);
        assert_eq!(quadrant(0.5, 0.6, 1.0, 0.5), Quadrant::Q2);
        assert_eq!(quadrant(0.5, 0.4, 1.0, 0.5), Quadrant::Q3);
        assert_eq!(quadrant(1.0, 0.4, 1.0, 0.5), Quadrant::Q4);
    }

    #[test]
    fn sweep_normalizes_to_one() {
        let ps = enumerate_policies(10, &[0], &DEFAULT_LEVELS).unwrap();
        let scored = ps.into_iter().zip([(1.0, 2.0), (2.0, 8.0), (3.0, 4.0)]).map(|(p, (r, i))| (p, r, i)).collect();
        let s = assemble_sweep(scored, 1, 1, 30).unwrap();
        let impacts: Vec<f64> = s.results.iter().map(|r| r.impact).collect();
        assert_eq!(impacts, vec![0.25, 1.0, 0.5]);
        assert_eq!(s.median_reduction, 2.0);
        assert_eq!(s.median_impact, 0.5);
        let q: Vec<Quadrant> = s.results.iter().map(|r| r.quadrant).collect();
        assert_eq!(q, vec![Quadrant::Q3, Quadrant::Q1, Quadrant::Q1]);
    }
}
