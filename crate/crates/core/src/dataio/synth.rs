//! Synthetic flight-coupled epidemic over the ten regions.
//!
//! Each region runs a discrete-time SIRS epidemic with seasonal forcing and a
//! shared lockdown period. Infected travellers on every directed flight seed
//! infections at the destination, so case dynamics depend on the flight graph.
//! Only one region starts infected; the others are seeded through flights
//! during an unrecorded burn-in period.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::load::{CaseTable, DateSpan, FlightTable};
use super::region::{Region, NUM_REGIONS, REGIONS};

/// Shape of the baseline flight network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    /// Dense network; volume grows with population and an airline-hub weight.
    Gravity,
    /// Hub and spoke: edges incident to the hub carry 90% of flights, the
    /// rest runs between the two busiest other regions.
    Hub(Region),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub days: usize,
    pub seed: u64,
    pub start: NaiveDate,
    pub topology: Topology,
    /// Day offsets whose case row for `Africa` is written as missing (`-1`).
    pub missing_days: Vec<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 440,
            seed: 2020,
            start: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
            topology: Topology::Gravity,
            missing_days: vec![150, 301],
        }
    }
}

impl SynthConfig {
    /// Default settings with a star network centred on `hub`.
    pub fn constructed_hub(hub: Region) -> Self {
        Self {
            topology: Topology::Hub(hub),
            seed: 4242,
            ..Self::default()
        }
    }
}

/// Hub used by the constructed-hub dataset: a small, well-connected transit region.
pub const DEFAULT_HUB: Region = Region::CentralAsia;

/// Share of baseline flights on edges incident to the hub in [`Topology::Hub`].
pub const HUB_FLIGHT_SHARE: f64 = 0.9;

// Millions of people, in region order.
const POPULATION_M: [f64; NUM_REGIONS] = [370.0, 430.0, 40.0, 1200.0, 400.0, 300.0, 420.0, 75.0, 1900.0, 680.0];
// Relative airline connectivity used by the gravity network.
const CONNECTIVITY: [f64; NUM_REGIONS] = [1.6, 0.8, 0.6, 0.5, 1.2, 0.9, 1.7, 0.4, 0.7, 1.0];
const BASE_R0: [f64; NUM_REGIONS] = [1.35, 1.3, 1.15, 1.2, 1.25, 1.3, 1.35, 1.2, 1.25, 1.2];
const REPORT_RATE: [f64; NUM_REGIONS] = [0.35, 0.25, 0.4, 0.1, 0.2, 0.25, 0.35, 0.15, 0.1, 0.15];

/// In the hub network the other regions transmit more weakly, so their
/// outbreaks lean on imports through the hub.
const LEAF_R0_SCALE: f64 = 0.8;

/// Unrecorded days at full mobility before the first recorded day, so the
/// outbreak has reached every region when recording starts.
const BURN_IN_DAYS: usize = 60;

const RECOVERY: f64 = 1.0 / 6.0;
const WANING: f64 = 1.0 / 200.0;
const PASSENGERS_PER_FLIGHT: f64 = 150.0;

/// Generated raw data: reported cases (`-1` = missing) and directed flight counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub start: NaiveDate,
    pub cases: Vec<[f64; NUM_REGIONS]>,
    pub flights: Vec<Vec<f64>>,
}

fn baseline_flights(topology: Topology, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = NUM_REGIONS;
    let mut base = vec![0.0; n * n];
    match topology {
        Topology::Gravity => {
            for u in 0..n {
                for v in 0..n {
                    if u != v {
                        let jitter = rng.random_range(0.7..1.3);
                        base[u * n + v] = 40.0
                            * CONNECTIVITY[u]
                            * CONNECTIVITY[v]
                            * (POPULATION_M[u] * POPULATION_M[v]).powf(0.25)
                            * jitter;
                    }
                }
            }
        }
        Topology::Hub(hub) => {
            let h = hub.index();
            let mut hub_total = 0.0;
            for v in (0..n).filter(|&v| v != h) {
                // leaves differ in volume so outgoing flights are not all tied
                let w = 0.4 + 1.2 * (v as f64 / (n - 1) as f64) * rng.random_range(0.8..1.2);
                base[h * n + v] = 2500.0 * w;
                base[v * n + h] = 2500.0 * w * rng.random_range(0.9..1.1);
                hub_total += base[h * n + v] + base[v * n + h];
            }
            // the remaining traffic runs between the two busiest leaves
            let mut leaves: Vec<usize> = (0..n).filter(|&v| v != h).collect();
            leaves.sort_by(|&a, &b| base[h * n + b].total_cmp(&base[h * n + a]));
            let (a, b) = (leaves[0], leaves[1]);
            let pair = hub_total * (1.0 - HUB_FLIGHT_SHARE) / HUB_FLIGHT_SHARE / 2.0;
            base[a * n + b] = pair;
            base[b * n + a] = pair;
        }
    }
    base
}

/// Mobility multiplier: a sharp drop after day 30, then a slow recovery.
fn mobility(day: usize) -> f64 {
    let d = day as f64;
    if d < 30.0 {
        1.0
    } else if d < 45.0 {
        1.0 - 0.85 * (d - 30.0) / 15.0
    } else if d < 250.0 {
        0.15 + 0.55 * (d - 45.0) / 205.0
    } else {
        0.85
    }
}

fn lockdown(day: usize) -> f64 {
    if (40..100).contains(&day) {
        0.8
    } else {
        1.0
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthData {
    let n = NUM_REGIONS;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = baseline_flights(cfg.topology, &mut rng);
    let phases: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..150.0)).collect();
    let noise = Normal::new(0.0_f64, 1.0).expect("valid normal");

    let seed_region = match cfg.topology {
        Topology::Hub(h) => h.index(),
        Topology::Gravity => Region::SoutheastAsia.index(),
    };
    let r0: Vec<f64> = (0..n)
        .map(|v| match cfg.topology {
            Topology::Hub(h) if h.index() != v => BASE_R0[v] * LEAF_R0_SCALE,
            _ => BASE_R0[v],
        })
        .collect();
    let pop: Vec<f64> = POPULATION_M.iter().map(|p| p * 1e6).collect();
    let mut s = vec![1.0; n];
    let mut i = vec![0.0; n];
    i[seed_region] = 2e-6;
    s[seed_region] -= 2e-6;

    let mut cases = Vec::with_capacity(cfg.days);
    let mut flights = Vec::with_capacity(cfg.days);
    for step in 0..BURN_IN_DAYS + cfg.days {
        let recorded = step >= BURN_IN_DAYS;
        let day = step.saturating_sub(BURN_IN_DAYS);
        let weekday = if day % 7 >= 5 { 0.8 } else { 1.0 };
        let m = mobility(day);
        let f: Vec<f64> = base
            .iter()
            .map(|&b| {
                if b == 0.0 {
                    0.0
                } else {
                    let lam = b * m * weekday * (0.08 * noise.sample(&mut rng)).exp();
                    lam.round().max(0.0)
                }
            })
            .collect();

        let mut reported = [0.0; NUM_REGIONS];
        let mut new_inf = vec![0.0; n];
        for v in 0..n {
            let season = 1.0 + 0.25 * (2.0 * std::f64::consts::PI * (day as f64 + phases[v]) / 150.0).sin();
            let beta = RECOVERY * r0[v] * season * lockdown(day);
            let local = beta * s[v] * i[v] * pop[v];
            let imported: f64 = (0..n)
                .filter(|&u| u != v)
                .map(|u| f[u * n + v] * PASSENGERS_PER_FLIGHT * i[u] * 3.0)
                .sum();
            let total = ((local + imported) * (0.05 * noise.sample(&mut rng)).exp()).min(s[v] * pop[v]);
            new_inf[v] = total.max(0.0);
        }
        for v in 0..n {
            let frac = new_inf[v] / pop[v];
            let recovered = RECOVERY * i[v];
            let waned = WANING * (1.0 - s[v] - i[v]);
            s[v] = (s[v] - frac + waned).clamp(0.0, 1.0);
            i[v] = (i[v] + frac - recovered).max(0.0);
            let lam = new_inf[v] * REPORT_RATE[v] * weekday;
            reported[v] = if lam > 0.0 {
                Poisson::new(lam).map(|p| p.sample(&mut rng)).unwrap_or(lam.round())
            } else {
                0.0
            };
        }
        if !recorded {
            continue;
        }
        if cfg.missing_days.contains(&day) {
            reported[Region::Africa.index()] = -1.0;
        }
        cases.push(reported);
        flights.push(f);
    }
    SynthData {
        start: cfg.start,
        cases,
        flights,
    }
}

impl SynthData {
    pub fn days(&self) -> usize {
        self.cases.len()
    }

    pub fn span(&self) -> DateSpan {
        DateSpan::new(self.start, self.start + Duration::days(self.days() as i64 - 1))
    }

    pub fn write_cases_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "region", "cases"])?;
        for (d, row) in self.cases.iter().enumerate() {
            let date = (self.start + Duration::days(d as i64)).to_string();
            for r in REGIONS {
                w.write_record([date.as_str(), r.name(), &format!("{}", row[r.index()])])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes every nonzero directed edge; absent pairs mean zero flights.
    pub fn write_flights_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "src", "dst", "flights"])?;
        for (d, m) in self.flights.iter().enumerate() {
            let date = (self.start + Duration::days(d as i64)).to_string();
            for u in REGIONS {
                for v in REGIONS {
                    let x = m[u.index() * NUM_REGIONS + v.index()];
                    if u != v && x != 0.0 {
                        w.write_record([date.as_str(), u.name(), v.name(), &format!("{x}")])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// The same data as [`super::read_cases`] would produce from the CSV.
    pub fn case_table(&self) -> CaseTable {
        let flagged = self.cases.iter().map(|row| row.iter().any(|&v| v < 0.0)).collect();
        let values = self
            .cases
            .iter()
            .map(|row| {
                let mut out = [None; NUM_REGIONS];
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = (v >= 0.0).then_some(v);
                }
                out
            })
            .collect();
        CaseTable {
            span: self.span(),
            values,
            flagged,
            regions: REGIONS.to_vec(),
        }
    }

    pub fn flight_table(&self) -> FlightTable {
        FlightTable {
            span: Some(self.span()),
            matrices: self.flights.clone(),
            flagged: vec![false; self.days()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{read_cases, read_flights};

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            days: 60,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg), generate(&cfg));
    }

    #[test]
    fn csv_matches_tables() {
        let data = generate(&SynthConfig {
            days: 40,
            missing_days: vec![5],
            ..SynthConfig::default()
        });
        let mut cases = Vec::new();
        data.write_cases_csv(&mut cases).unwrap();
        let mut flights = Vec::new();
        data.write_flights_csv(&mut flights).unwrap();
        assert_eq!(read_cases(cases.as_slice()).unwrap(), data.case_table());
        assert_eq!(read_flights(flights.as_slice(), None).unwrap(), data.flight_table());
    }

    #[test]
    fn hub_carries_ninety_percent() {
        let data = generate(&SynthConfig {
            days: 30,
            ..SynthConfig::constructed_hub(DEFAULT_HUB)
        });
        let h = DEFAULT_HUB.index();
        let (mut hub, mut total) = (0.0, 0.0);
        for m in &data.flights {
            for u in 0..NUM_REGIONS {
                for v in 0..NUM_REGIONS {
                    total += m[u * NUM_REGIONS + v];
                    if u == h || v == h {
                        hub += m[u * NUM_REGIONS + v];
                    }
                }
            }
        }
        let share = hub / total;
        assert!((share - HUB_FLIGHT_SHARE).abs() < 0.01, "hub share {share}");
    }

    #[test]
    fn epidemic_reaches_every_region() {
        let data = generate(&SynthConfig::default());
        for r in 0..NUM_REGIONS {
            let peak = data.cases.iter().map(|row| row[r]).fold(0.0, f64::max);
            assert!(peak > 10.0, "region {r} peak {peak}");
        }
    }
}
