#![allow(dead_code)]

use std::path::{Path, PathBuf};

use aerograph::context::RunContext;
use aerograph::ops::{self, SweepSpec};
use aerograph_core::dataio::Region;
use aerograph_core::training::TrainConfig;

pub const STRIDE: usize = 16;

pub fn shipped_data() -> (PathBuf, PathBuf) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic");
    (dir.join("cases.csv"), dir.join("flights.csv"))
}

pub fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        seed: 7,
        ensemble_size: 2,
        ..TrainConfig::default()
    }
}

pub fn sweep_spec() -> SweepSpec {
    SweepSpec {
        nodes: vec![Region::WesternEurope, Region::NorthAmerica],
        levels: vec![0.25, 0.5, 0.75],
        max_policies: None,
        seed: 0,
        models: 2,
        days: 30,
        window_stride: STRIDE,
    }
}

/// A trained run with bias factors only.
pub fn trained_run(dir: &Path) -> RunContext {
    let (cases, flights) = shipped_data();
    ops::train(&cases, &flights, dir, &small_config()).expect("train");
    let ctx = RunContext::open(dir).expect("open");
    ops::bias(&ctx, 30, 8).expect("bias")
}

/// A trained run with sensitivity rankings and a policy sweep as well.
pub fn provisioned_run(dir: &Path) -> RunContext {
    let ctx = trained_run(dir);
    provisioned_run_from(&ctx);
    ctx
}

/// Adds the sensitivity ranking and policy sweep to a trained run.
pub fn provisioned_run_from(ctx: &RunContext) {
    ops::sensitivity(ctx, 30, 2, STRIDE).expect("sensitivity");
    ops::policy_sweep(ctx, &sweep_spec()).expect("sweep");
}

pub fn run_cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = aerograph::cli::run(std::iter::once("aerograph").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).expect("utf-8 output"))
}
