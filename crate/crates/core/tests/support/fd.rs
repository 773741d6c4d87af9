//! Tape gradients against central finite differences. Each check covers
//! twenty random configurations and reports the first failure.

use std::sync::Arc;

use aerograph_core::model::layers::{
    graph_norm, linear, lstm_step, neighbor_coefficients, sage_forward, GraphNormVars, LinearVars, LstmVars, SageVars,
    GRAPH_NORM_EPS,
};
use aerograph_core::model::{DayInput, DcsageModel, ModelConfig, ModelVars, WindowBatch};
use aerograph_core::numerics::{Tape, Tensor, Var};
use aerograph_core::training::mase_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const ABS_FLOOR: f64 = 1e-8;
const CONFIGS: u64 = 20;

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn loss_at(leaves: &[Tensor], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.constant(t.clone()).unwrap()).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item().unwrap()
}

/// One-sided slopes further apart than this mark a ReLU or abs kink inside
/// the stencil, where central differences are meaningless.
const KINK: f64 = 1e-2;

struct Check {
    worst: f64,
    at: String,
    entries: usize,
    kinks: usize,
}

/// Worst element-wise relative error between the tape gradient and central
/// differences; pairs closer than the absolute floor count as exact.
fn check(leaves: &[Tensor], build: &Build) -> Check {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let loss = build(&mut tape, &vars);
    let base = tape.value(loss).item().unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut out = Check {
        worst: 0.0,
        at: String::new(),
        entries: 0,
        kinks: 0,
    };
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap();
        for j in 0..leaf.len() {
            out.entries += 1;
            let mut plus = leaves.to_vec();
            plus[i].data_mut()[j] += EPS;
            let mut minus = leaves.to_vec();
            minus[i].data_mut()[j] -= EPS;
            let (lp, lm) = (loss_at(&plus, build), loss_at(&minus, build));
            let numeric = (lp - lm) / (2.0 * EPS);
            let (fwd, bwd) = ((lp - base) / EPS, (base - lm) / EPS);
            if (fwd - bwd).abs() > KINK * fwd.abs().max(bwd.abs()).max(1e-3) {
                out.kinks += 1;
                continue;
            }
            let a = analytic.data()[j];
            let diff = (a - numeric).abs();
            if diff <= ABS_FLOOR {
                continue;
            }
            let rel = diff / a.abs().max(numeric.abs());
            if rel > out.worst {
                out.worst = rel;
                out.at = format!("leaf {i} entry {j}: tape {a:e}, numeric {numeric:e}");
            }
        }
    }
    out
}

fn within(seed: u64, c: &Check, tol: f64) -> Result<(), String> {
    if c.worst > tol {
        return Err(format!("config {seed}: relative error {:e} at {}", c.worst, c.at));
    }
    if c.kinks * 100 > c.entries {
        return Err(format!("config {seed}: {} of {} entries straddle a kink", c.kinks, c.entries));
    }
    Ok(())
}

/// `sum(out * w)` for a fixed random `w`, so every output entry matters.
fn weighted_sum(tape: &mut Tape, out: Var, w: &Tensor) -> Var {
    let wv = tape.constant(w.clone()).unwrap();
    let p = tape.mul(out, wv).unwrap();
    tape.sum(p).unwrap()
}

pub fn random_adjacency(rng: &mut ChaCha8Rng, nodes: usize) -> Vec<f64> {
    (0..nodes * nodes)
        .map(|k| {
            if k / nodes != k % nodes && rng.random_bool(0.7) {
                rng.random_range(0.1..3.0)
            } else {
                0.0
            }
        })
        .collect()
}

pub fn sage_layer() -> Result<(), String> {
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (graphs, nodes) = (rng.random_range(1..3), rng.random_range(2..6));
        let (din, dout) = (rng.random_range(1..4), rng.random_range(1..5));
        let mut coeffs = Vec::new();
        for _ in 0..graphs {
            coeffs.extend(neighbor_coefficients(&random_adjacency(&mut rng, nodes), nodes).unwrap());
        }
        let coeffs: Arc<[f64]> = coeffs.into();
        let leaves = vec![
            random(&mut rng, &[graphs * nodes, din], -2.0, 2.0),
            random(&mut rng, &[din, dout], -1.0, 1.0),
            random(&mut rng, &[din, dout], -1.0, 1.0),
        ];
        let w = random(&mut rng, &[graphs * nodes, dout], -1.0, 1.0);
        let build = |tape: &mut Tape, v: &[Var]| {
            let layer = SageVars {
                w_self: v[1],
                w_neigh: v[2],
            };
            let out = sage_forward(tape, &layer, v[0], coeffs.clone(), nodes).unwrap();
            weighted_sum(tape, out, &w)
        };
        within(seed, &check(&leaves, &build), 1e-4)?;
    }
    Ok(())
}

pub fn graph_norm_layer() -> Result<(), String> {
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (graphs, nodes, dim) = (rng.random_range(1..3), rng.random_range(2..6), rng.random_range(1..5));
        let leaves = vec![
            random(&mut rng, &[graphs * nodes, dim], -2.0, 2.0),
            random(&mut rng, &[1, dim], 0.5, 1.5),
            random(&mut rng, &[1, dim], -0.5, 0.5),
            random(&mut rng, &[1, dim], 0.0, 1.5),
        ];
        let w = random(&mut rng, &[graphs * nodes, dim], -1.0, 1.0);
        let build = |tape: &mut Tape, v: &[Var]| {
            let layer = GraphNormVars {
                gamma: v[1],
                beta: v[2],
                alpha: v[3],
                eps: GRAPH_NORM_EPS,
            };
            let out = graph_norm(tape, &layer, v[0], nodes).unwrap();
            weighted_sum(tape, out, &w)
        };
        within(seed, &check(&leaves, &build), 1e-4)?;
    }
    Ok(())
}

pub fn lstm_step_layer() -> Result<(), String> {
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (rows, input, hidden) = (rng.random_range(1..5), rng.random_range(1..4), rng.random_range(1..5));
        let mut leaves = vec![
            random(&mut rng, &[rows, hidden], -1.0, 1.0),
            random(&mut rng, &[rows, hidden], -1.0, 1.0),
            random(&mut rng, &[rows, input], -2.0, 2.0),
        ];
        for _ in 0..4 {
            leaves.push(random(&mut rng, &[hidden + input, hidden], -1.0, 1.0));
        }
        for _ in 0..4 {
            leaves.push(random(&mut rng, &[1, hidden], -0.5, 0.5));
        }
        let wh = random(&mut rng, &[rows, hidden], -1.0, 1.0);
        let wc = random(&mut rng, &[rows, hidden], -1.0, 1.0);
        let build = |tape: &mut Tape, v: &[Var]| {
            let cell = LstmVars {
                w_f: v[3],
                w_i: v[4],
                w_o: v[5],
                w_c: v[6],
                b_f: v[7],
                b_i: v[8],
                b_o: v[9],
                b_c: v[10],
            };
            let (h, c) = lstm_step(tape, &cell, v[0], v[1], v[2]).unwrap();
            let lh = weighted_sum(tape, h, &wh);
            let lc = weighted_sum(tape, c, &wc);
            tape.add(lh, lc).unwrap()
        };
        within(seed, &check(&leaves, &build), 1e-4)?;
    }
    Ok(())
}

pub fn linear_head() -> Result<(), String> {
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (rows, din) = (rng.random_range(1..6), rng.random_range(1..8));
        let leaves = vec![
            random(&mut rng, &[rows, din], -2.0, 2.0),
            random(&mut rng, &[din, 1], -1.0, 1.0),
            random(&mut rng, &[1, 1], -1.0, 1.0),
        ];
        let w = random(&mut rng, &[rows, 1], -1.0, 1.0);
        let build = |tape: &mut Tape, v: &[Var]| {
            let layer = LinearVars { w: v[1], b: v[2] };
            let out = linear(tape, &layer, v[0]).unwrap();
            weighted_sum(tape, out, &w)
        };
        within(seed, &check(&leaves, &build), 1e-4)?;
    }
    Ok(())
}

/// Rebuilds parameter handles from leaves in canonical order.
fn model_vars(v: &[Var]) -> ModelVars {
    let sage = |i: usize| SageVars {
        w_self: v[i],
        w_neigh: v[i + 1],
    };
    let norm = |i: usize| GraphNormVars {
        gamma: v[i],
        beta: v[i + 1],
        alpha: v[i + 2],
        eps: GRAPH_NORM_EPS,
    };
    let lstm = |i: usize| LstmVars {
        w_f: v[i],
        w_i: v[i + 1],
        w_o: v[i + 2],
        w_c: v[i + 3],
        b_f: v[i + 4],
        b_i: v[i + 5],
        b_o: v[i + 6],
        b_c: v[i + 7],
    };
    ModelVars {
        sage1: sage(0),
        norm1: norm(2),
        sage2: sage(5),
        norm2: norm(7),
        lstm1: lstm(10),
        lstm2: lstm(18),
        head: LinearVars { w: v[26], b: v[27] },
    }
}

pub fn random_window(rng: &mut ChaCha8Rng, nodes: usize, days: usize) -> Vec<DayInput> {
    (0..days)
        .map(|_| DayInput::new((0..nodes).map(|_| rng.random_range(0.0..4.0)).collect(), random_adjacency(rng, nodes)))
        .collect()
}

pub fn full_model() -> Result<(), String> {
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let config = ModelConfig {
            input_dim: 1,
            embed_dim: rng.random_range(2..5),
            hidden_dim: rng.random_range(2..5),
            window_len: rng.random_range(2..5),
        };
        let nodes = rng.random_range(2..5);
        let model = DcsageModel::init(config, seed).unwrap();
        let windows: Vec<Vec<DayInput>> = (0..2).map(|_| random_window(&mut rng, nodes, config.window_len)).collect();
        let refs: Vec<&[DayInput]> = windows.iter().map(Vec::as_slice).collect();
        let batch = WindowBatch::new(&refs, config.window_len, 1).unwrap();
        let target = random(&mut rng, &[batch.rows(), 1], 0.5, 4.0);
        let leaves: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        assert_eq!(leaves.len(), 28);
        let build = |tape: &mut Tape, v: &[Var]| {
            let vars = model_vars(v);
            let pred = model.forward_batch(tape, &vars, &batch).unwrap();
            mase_loss(tape, pred, &target).unwrap()
        };
        within(seed, &check(&leaves, &build), 1e-3)?;
    }
    Ok(())
}

pub fn replay_is_bit_identical() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let config = ModelConfig::default();
    let model = DcsageModel::init(config, 3).unwrap();
    let window = random_window(&mut rng, 10, config.window_len);
    let batch = WindowBatch::new(&[&window], config.window_len, 1).unwrap();
    let target = random(&mut rng, &[10, 1], 0.5, 4.0);
    let run = || {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true).unwrap();
        let pred = model.forward_batch(&mut tape, &vars, &batch).unwrap();
        let loss = mase_loss(&mut tape, pred, &target).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g: Vec<Vec<f64>> = vars.ordered().iter().map(|v| grads.get(*v).unwrap().data().to_vec()).collect();
        (tape.value(pred).data().to_vec(), g)
    };
    let (p1, g1) = run();
    let (p2, g2) = run();
    let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    same(&p1, &p2) && g1.iter().zip(&g2).all(|(a, b)| same(a, b))
}

