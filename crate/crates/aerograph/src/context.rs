use std::fs;
use std::path::{Path, PathBuf};

use aerograph_core::dataio::{Dataset, Region, NUM_REGIONS};
use aerograph_core::forecast::{BiasFactors, ForecastWindow};
use aerograph_core::model::{DcsageModel, ModelCheckpoint};
use chrono::NaiveDate;
use serde::de::DeserializeOwned;

use crate::error::{Error, ErrorKind, Result};
use crate::manifest::{verify, RunManifest};

/// A verified run directory: manifest, dataset, ensemble and bias factors.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub manifest_hash: String,
    pub dataset: Dataset,
    pub models: Vec<DcsageModel>,
    pub factors: Option<BiasFactors>,
}

impl RunContext {
    /// Loads the manifest and everything it references, checking each file
    /// against its recorded hash.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(dir)?;
        let cases = PathBuf::from(&manifest.cases.path);
        let flights = PathBuf::from(&manifest.flights.path);
        verify(&cases, &manifest.cases)?;
        verify(&flights, &manifest.flights)?;
        let dataset = Dataset::load(&cases, &flights)?;

        let mut models = Vec::with_capacity(manifest.checkpoints.len());
        for c in &manifest.checkpoints {
            let path = dir.join(&c.path);
            verify(&path, c)?;
            let ck = ModelCheckpoint::load(&path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
            models.push(ck.model);
        }
        if models.is_empty() {
            return Err(Error::data("the manifest lists no checkpoints"));
        }

        let factors = match &manifest.bias {
            Some(b) => {
                let path = dir.join(&b.file.path);
                verify(&path, &b.file)?;
                let text = fs::read_to_string(&path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
                let f = BiasFactors::from_json(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
                if f.factors.len() != NUM_REGIONS {
                    return Err(Error::data(format!("{}: expected {NUM_REGIONS} factors", path.display())));
                }
                Some(f)
            }
            None => None,
        };

        Ok(Self {
            dir: dir.to_path_buf(),
            manifest_hash: manifest.hash(),
            manifest,
            dataset,
            models,
            factors,
        })
    }

    pub fn factors(&self) -> Result<&BiasFactors> {
        self.factors.as_ref().ok_or_else(|| {
            Error::new(
                ErrorKind::NotProvisioned,
                "no bias factors for this run; run `aerograph bias` first",
            )
        })
    }

    /// The first `models` ensemble members.
    pub fn ensemble(&self, models: usize) -> Result<&[DcsageModel]> {
        if models == 0 || models > self.models.len() {
            return Err(Error::invalid(
                "models",
                format!("models must be between 1 and the ensemble size {}", self.models.len()),
            ));
        }
        Ok(&self.models[..models])
    }

    /// Every `stride`-th window with `days` days of ground truth after it.
    pub fn windows(&self, days: usize, stride: usize) -> Result<Vec<ForecastWindow>> {
        if days == 0 {
            return Err(Error::invalid("days", "days must be at least 1"));
        }
        if stride == 0 {
            return Err(Error::invalid("stride", "stride must be at least 1"));
        }
        let windows: Vec<ForecastWindow> = ForecastWindow::all(&self.dataset, days).into_iter().step_by(stride).collect();
        if windows.is_empty() {
            return Err(Error::data(format!("no window has {days} days of data after it")));
        }
        Ok(windows)
    }

    /// The window whose first seed day is `start`, if it has `days` days after it.
    pub fn window_at(&self, start: NaiveDate, days: usize) -> Result<ForecastWindow> {
        if days == 0 {
            return Err(Error::invalid("days", "days must be at least 1"));
        }
        let not_found = || {
            Error::new(
                ErrorKind::NotFound,
                format!("no forecast window starts on {start} with {days} days of data after it"),
            )
            .with_field("window_start")
        };
        let idx = self.dataset.graph_index(start).ok_or_else(not_found)?;
        if !self.dataset.forecast_starts(days).contains(&idx) {
            return Err(not_found());
        }
        Ok(ForecastWindow::from_dataset(&self.dataset, idx, days))
    }

    /// Windows with the given start dates, in the given order.
    pub fn windows_at(&self, starts: &[NaiveDate], days: usize) -> Result<Vec<ForecastWindow>> {
        starts.iter().map(|&s| self.window_at(s, days)).collect()
    }

    /// Reads a JSON artifact from the run directory, rejecting one produced
    /// under a different manifest. `None` if the file does not exist.
    pub fn read_artifact<T: DeserializeOwned + Stamped>(&self, name: &str) -> Result<Option<T>> {
        let path = self.dir.join(name);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let value: T = serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        if value.manifest_hash() != self.manifest_hash {
            return Err(Error::data(format!(
                "{} was produced under manifest {}, but the run is now at {}; re-run the command that writes it",
                path.display(),
                value.manifest_hash(),
                self.manifest_hash
            )));
        }
        Ok(Some(value))
    }
}

/// Artifacts that record the manifest they derive from.
pub trait Stamped {
    fn manifest_hash(&self) -> &str;
}

pub fn parse_region(field: &str, s: &str) -> Result<Region> {
    s.parse::<Region>().map_err(|e| Error::invalid(field, e.to_string()))
}
