//! Command-line driver. Results go to stdout as JSON, logs to stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use aerograph_core::analysis::DEFAULT_LEVELS;
use aerograph_core::dataio::synth::{SynthConfig, Topology};
use aerograph_core::dataio::Region;
use aerograph_core::forecast::DEFAULT_HORIZON;
use aerograph_core::training::TrainConfig;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::api::{self, AppState};
use crate::context::{parse_region, RunContext};
use crate::error::{Error, ErrorKind, Result};
use crate::ops::{self, EvaluateRequest, SweepSpec};
use crate::plots;

#[derive(Parser, Debug)]
#[command(name = "aerograph", version, about = "Flight-network epidemic forecasting, sensitivity and policy search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct RunDir {
    /// Run directory holding the manifest, checkpoints and artifacts.
    #[arg(long, env = "AEROGRAPH_DATA_DIR", default_value = "run")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct Inputs {
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub flights: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate and preprocess the input files and report the window count.
    Ingest(Inputs),
    /// Write a synthetic cases/flights dataset.
    Synth {
        #[arg(long, env = "AEROGRAPH_DATA_DIR", default_value = "data")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = SynthConfig::default().days)]
        days: usize,
        /// Build the hub-and-spoke network around this region.
        #[arg(long)]
        hub: Option<String>,
    },
    /// Train the ensemble; writes checkpoints, training reports and the manifest.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        run: RunDir,
        #[arg(long, default_value_t = TrainConfig::default().ensemble_size)]
        ensemble: usize,
        #[arg(long, default_value_t = TrainConfig::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = TrainConfig::default().hidden_dim)]
        hidden_dim: usize,
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = TrainConfig::default().lr)]
        lr: f64,
    },
    /// Fit per-region bias factors on every stride-th window.
    Bias {
        #[command(flatten)]
        run: RunDir,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        days: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Export recursive forecasts: per-model CSV and ensemble-mean JSON.
    Forecast {
        #[command(flatten)]
        run: RunDir,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        days: usize,
        /// Ensemble members to use; all by default.
        #[arg(long)]
        models: Option<usize>,
        /// Window start date (repeatable); every stride-th window by default.
        #[arg(long = "window")]
        windows: Vec<NaiveDate>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Isolate each region in turn, fit Gumbel distributions and rank regions.
    Sensitivity {
        #[command(flatten)]
        run: RunDir,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        days: usize,
        #[arg(long)]
        models: Option<usize>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Sweep the flight-reduction policy grid, or score one policy with --reductions.
    Policy {
        #[command(flatten)]
        run: RunDir,
        /// Regions to restrict, e.g. WE,NA; the five most sensitive by default.
        #[arg(long, value_delimiter = ',')]
        nodes: Option<Vec<String>>,
        /// Reduction levels in percent.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        #[arg(long)]
        max_policies: Option<usize>,
        /// Seed for --max-policies sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ensemble members; 40 or the whole ensemble if smaller by default.
        #[arg(long)]
        models: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Score one policy against the stored sweep, e.g. WE=0.5,NA=0.25 (fractions).
        #[arg(long, value_delimiter = ',')]
        reductions: Option<Vec<String>>,
        /// With --reductions: a single window instead of the sweep's windows.
        #[arg(long)]
        window: Option<NaiveDate>,
    },
    /// Write plot-data JSON into <out>/plots.
    Plots {
        #[command(flatten)]
        run: RunDir,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        days: usize,
    },
    /// Start the HTTP service.
    Serve {
        #[command(flatten)]
        run: RunDir,
        #[arg(long, env = "AEROGRAPH_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Serialize)]
struct SynthOutput {
    cases: String,
    flights: String,
    days: usize,
    seed: u64,
    topology: Topology,
}

#[derive(Serialize)]
struct TrainOutput {
    manifest_hash: String,
    manifest: String,
    checkpoints: Vec<String>,
}

#[derive(Serialize)]
struct BiasOutput {
    manifest_hash: String,
    factors: Vec<ops::RegionFactor>,
    guarded_terms: usize,
}

#[derive(Serialize)]
struct ForecastOutput {
    manifest_hash: String,
    windows: usize,
    models: usize,
    json: String,
    csv: String,
}

#[derive(Serialize)]
struct SweepOutput {
    manifest_hash: String,
    nodes: Vec<String>,
    levels: Vec<f64>,
    policies: usize,
    windows: usize,
    models: usize,
    max_raw_impact: f64,
    median_reduction: f64,
    median_impact: f64,
    json: String,
    csv: String,
}

fn print<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("output serializes");
    writeln!(out, "{json}").map_err(|e| Error::runtime(format!("cannot write output: {e}")))
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

/// `WE=0.5` pairs into the request map.
pub fn parse_reduction_pairs(pairs: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::invalid("reductions", format!("`{pair}` is not REGION=FRACTION")))?;
        let key = key.trim().to_string();
        let fraction = value
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::invalid(format!("reductions.{key}"), format!("`{value}` is not a number")))?;
        if map.insert(key.clone(), fraction).is_some() {
            return Err(Error::invalid(format!("reductions.{key}"), format!("{key} is given more than once")));
        }
    }
    Ok(map)
}

fn percent_levels(levels: &[f64]) -> Result<Vec<f64>> {
    levels
        .iter()
        .map(|&l| {
            if l > 0.0 && l <= 100.0 {
                Ok(l / 100.0)
            } else {
                Err(Error::invalid("levels", format!("level {l}% is outside (0, 100]")))
            }
        })
        .collect()
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Ingest(inputs) => print(out, &ops::ingest(&inputs.cases, &inputs.flights)?),
        Command::Synth { out: dir, seed, days, hub } => {
            let mut cfg = match hub {
                Some(h) => SynthConfig::constructed_hub(parse_region("hub", &h)?),
                None => SynthConfig::default(),
            };
            cfg.days = days;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let (cases, flights) = ops::synth(&dir, &cfg)?;
            print(
                out,
                &SynthOutput {
                    cases: path_string(&cases),
                    flights: path_string(&flights),
                    days: cfg.days,
                    seed: cfg.seed,
                    topology: cfg.topology,
                },
            )
        }
        Command::Train {
            inputs,
            run,
            ensemble,
            seed,
            hidden_dim,
            epochs,
            lr,
        } => {
            let config = TrainConfig {
                epochs,
                lr,
                seed,
                ensemble_size: ensemble,
                hidden_dim,
                ..TrainConfig::default()
            };
            let manifest = ops::train(&inputs.cases, &inputs.flights, &run.out, &config)?;
            print(
                out,
                &TrainOutput {
                    manifest_hash: manifest.hash(),
                    manifest: path_string(&crate::manifest::RunManifest::path(&run.out)),
                    checkpoints: manifest.checkpoints.iter().map(|c| c.path.clone()).collect(),
                },
            )
        }
        Command::Bias { run, days, stride } => {
            let ctx = ops::bias(&RunContext::open(&run.out)?, days, stride)?;
            let factors = ctx.factors()?;
            print(
                out,
                &BiasOutput {
                    manifest_hash: ctx.manifest_hash.clone(),
                    factors: ops::factors_table(factors),
                    guarded_terms: factors.provenance.guarded_terms,
                },
            )
        }
        Command::Forecast {
            run,
            days,
            models,
            windows,
            stride,
        } => {
            let ctx = RunContext::open(&run.out)?;
            let selected = if windows.is_empty() {
                ctx.windows(days, stride)?
            } else {
                ctx.windows_at(&windows, days)?
            };
            let models = models.unwrap_or(ctx.models.len());
            ctx.ensemble(models)?;
            let export = ops::forecast_export(&ctx, &selected, days, models)?;
            print(
                out,
                &ForecastOutput {
                    manifest_hash: export.manifest_hash,
                    windows: export.windows.len(),
                    models,
                    json: path_string(&ctx.dir.join(ops::FORECAST_FILE)),
                    csv: path_string(&ctx.dir.join(ops::FORECAST_CSV)),
                },
            )
        }
        Command::Sensitivity {
            run,
            days,
            models,
            stride,
        } => {
            let ctx = RunContext::open(&run.out)?;
            let models = models.unwrap_or(ctx.models.len());
            let art = ops::sensitivity(&ctx, days, models, stride)?;
            print(out, &ops::rankings(&art, None)?)
        }
        Command::Policy {
            run,
            nodes,
            levels,
            max_policies,
            seed,
            models,
            days,
            stride,
            reductions,
            window,
        } => {
            let ctx = RunContext::open(&run.out)?;
            if let Some(pairs) = reductions {
                let req = EvaluateRequest {
                    reductions: parse_reduction_pairs(&pairs)?,
                    window_start: window,
                    days,
                    models,
                };
                ops::parse_reductions(&req.reductions)?;
                let sweep = ctx.read_artifact::<ops::SweepArtifact>(ops::SWEEP_FILE)?.ok_or_else(|| {
                    Error::new(ErrorKind::NotProvisioned, "no stored policy sweep; run `aerograph policy` without --reductions first")
                })?;
                return print(out, &ops::evaluate(&ctx, &sweep, &req)?);
            }
            let nodes = match nodes {
                Some(list) => list.iter().map(|s| parse_region("nodes", s)).collect::<Result<Vec<Region>>>()?,
                None => ops::default_nodes(&ctx)?,
            };
            let levels = match levels {
                Some(l) => percent_levels(&l)?,
                None => DEFAULT_LEVELS.to_vec(),
            };
            let spec = SweepSpec {
                nodes,
                levels,
                max_policies,
                seed,
                models: models.unwrap_or_else(|| ops::default_policy_models(&ctx)),
                days: days.unwrap_or(DEFAULT_HORIZON),
                window_stride: stride,
            };
            let art = ops::policy_sweep(&ctx, &spec)?;
            print(
                out,
                &SweepOutput {
                    manifest_hash: art.manifest_hash.clone(),
                    nodes: art.nodes.clone(),
                    levels: art.levels.clone(),
                    policies: art.sweep.results.len(),
                    windows: art.sweep.windows,
                    models: art.sweep.models,
                    max_raw_impact: art.sweep.max_raw_impact,
                    median_reduction: art.sweep.median_reduction,
                    median_impact: art.sweep.median_impact,
                    json: path_string(&ctx.dir.join(ops::SWEEP_FILE)),
                    csv: path_string(&ctx.dir.join(ops::SWEEP_CSV)),
                },
            )
        }
        Command::Plots { run, days } => {
            let ctx = RunContext::open(&run.out)?;
            print(out, &plots::emit(&ctx, days)?)
        }
        Command::Serve { run, port, host } => {
            let state = AppState::new(RunContext::open(&run.out)?)?;
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::runtime(format!("cannot start the runtime: {e}")))?;
            rt.block_on(api::serve(state, &host, port))
        }
    }
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 success, 1 usage, 2 data or validation, 3 runtime or numeric.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            match &e.field {
                Some(field) => eprintln!("error: {field}: {}", e.message),
                None => eprintln!("error: {}", e.message),
            }
            e.exit_code()
        }
    }
}
