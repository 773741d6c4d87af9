//! Forward passes against straight-line loop implementations.

use aerograph_core::model::layers::{GraphNormLayer, LstmCell, SageLayer};
use aerograph_core::model::{DayInput, DcsageModel, ModelConfig};
use aerograph_core::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-8;

type Mat = Vec<Vec<f64>>;

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

fn tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

fn rows_of(t: &Tensor) -> Mat {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| (0..c).map(|j| t.get(i, j)).collect()).collect()
}

fn within(a: &Mat, b: &Mat, what: &str) -> Result<(), String> {
    for (i, (ra, rb)) in a.iter().zip(b).enumerate() {
        for (j, (x, y)) in ra.iter().zip(rb).enumerate() {
            if (x - y).abs() > TOL {
                return Err(format!("{what}[{i}][{j}]: {x} vs {y}"));
            }
        }
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `relu(h_v W_self + (sum over in-neighbours u of A[u][v] h_u / |N(v)|) W_neigh)`
fn sage_oracle(h: &Mat, a: &Mat, w_self: &Mat, w_neigh: &Mat) -> Mat {
    let n = h.len();
    let din = h[0].len();
    let dout = w_self[0].len();
    let mut out = vec![vec![0.0; dout]; n];
    for v in 0..n {
        let count = (0..n).filter(|&u| a[u][v] > 0.0).count();
        let mut agg = vec![0.0; din];
        if count > 0 {
            for u in 0..n {
                for k in 0..din {
                    agg[k] += a[u][v] * h[u][k] / count as f64;
                }
            }
        }
        for j in 0..dout {
            let mut s = 0.0;
            for k in 0..din {
                s += h[v][k] * w_self[k][j] + agg[k] * w_neigh[k][j];
            }
            out[v][j] = s.max(0.0);
        }
    }
    out
}

fn graph_norm_oracle(h: &Mat, gamma: &[f64], beta: &[f64], alpha: &[f64], eps: f64) -> Mat {
    let n = h.len() as f64;
    let d = h[0].len();
    let mut out = h.clone();
    for j in 0..d {
        let mean = h.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = h.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        for (o, r) in out.iter_mut().zip(h) {
            o[j] = gamma[j] * (r[j] - alpha[j] * mean) / (var + eps).sqrt() + beta[j];
        }
    }
    out
}

struct Gates<'a> {
    w: [&'a Mat; 4],
    b: [&'a [f64]; 4],
}

/// Gates `f, i, o, C_hat` over `[h_prev, x]`; returns `(h, C)` for one row.
fn lstm_oracle(g: &Gates, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hx: Vec<f64> = h_prev.iter().chain(x).copied().collect();
    let hidden = h_prev.len();
    let pre = |k: usize, j: usize| g.b[k][j] + hx.iter().enumerate().map(|(r, v)| v * g.w[k][r][j]).sum::<f64>();
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    for j in 0..hidden {
        let f = sigmoid(pre(0, j));
        let i = sigmoid(pre(1, j));
        let o = sigmoid(pre(2, j));
        let c_hat = pre(3, j).tanh();
        c[j] = f * c_prev[j] + i * c_hat;
        h[j] = o * c[j].tanh();
    }
    (h, c)
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    (0..n)
        .map(|u| {
            (0..n)
                .map(|v| if u != v && rng.random_bool(0.6) { rng.random_range(0.1..3.0) } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn sage() -> Result<(), String> {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, din, dout) = (rng.random_range(2..7), rng.random_range(1..4), rng.random_range(1..6));
        let layer = SageLayer::init(din, dout, &mut rng).unwrap();
        let h = rand_mat(&mut rng, n, din, -2.0, 2.0);
        let a = random_adjacency(&mut rng, n);
        let got = layer.forward(&tensor(&h), &tensor(&a)).unwrap();
        let want = sage_oracle(&h, &a, &rows_of(&layer.w_self), &rows_of(&layer.w_neigh));
        within(&rows_of(&got), &want, "sage")?;
    }
    Ok(())
}

pub fn graph_norm() -> Result<(), String> {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let (n, d) = (rng.random_range(2..7), rng.random_range(1..5));
        let mut layer = GraphNormLayer::new(d);
        layer.gamma = tensor(&rand_mat(&mut rng, 1, d, 0.5, 2.0));
        layer.beta = tensor(&rand_mat(&mut rng, 1, d, -1.0, 1.0));
        layer.alpha = tensor(&rand_mat(&mut rng, 1, d, 0.0, 1.5));
        let h = rand_mat(&mut rng, n, d, -3.0, 3.0);
        let got = layer.forward(&tensor(&h)).unwrap();
        let want = graph_norm_oracle(&h, layer.gamma.data(), layer.beta.data(), layer.alpha.data(), layer.eps);
        within(&rows_of(&got), &want, "graph_norm")?;
    }
    Ok(())
}

pub fn lstm_step() -> Result<(), String> {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (rows, input, hidden) = (rng.random_range(1..5), rng.random_range(1..4), rng.random_range(1..6));
        let mut cell = LstmCell::init(input, hidden, &mut rng).unwrap();
        cell.b_f = tensor(&rand_mat(&mut rng, 1, hidden, -0.5, 0.5));
        cell.b_i = tensor(&rand_mat(&mut rng, 1, hidden, -0.5, 0.5));
        let h_prev = rand_mat(&mut rng, rows, hidden, -1.0, 1.0);
        let c_prev = rand_mat(&mut rng, rows, hidden, -1.0, 1.0);
        let x = rand_mat(&mut rng, rows, input, -2.0, 2.0);
        let (h, c) = cell.step(&tensor(&h_prev), &tensor(&c_prev), &tensor(&x)).unwrap();
        let w = [rows_of(&cell.w_f), rows_of(&cell.w_i), rows_of(&cell.w_o), rows_of(&cell.w_c)];
        let gates = Gates {
            w: [&w[0], &w[1], &w[2], &w[3]],
            b: [cell.b_f.data(), cell.b_i.data(), cell.b_o.data(), cell.b_c.data()],
        };
        let (mut hw, mut cw) = (Vec::new(), Vec::new());
        for r in 0..rows {
            let (hr, cr) = lstm_oracle(&gates, &h_prev[r], &c_prev[r], &x[r]);
            hw.push(hr);
            cw.push(cr);
        }
        within(&rows_of(&h), &hw, "lstm h")?;
        within(&rows_of(&c), &cw, "lstm C")?;
    }
    Ok(())
}

/// Whole network on one window, every layer written out with loops.
fn model_oracle(m: &DcsageModel, window: &[DayInput]) -> Vec<f64> {
    let n = window[0].nodes();
    let hidden = m.config.hidden_dim;
    let lstm_gates = |cell: &LstmCell| {
        (
            [rows_of(&cell.w_f), rows_of(&cell.w_i), rows_of(&cell.w_o), rows_of(&cell.w_c)],
            [cell.b_f.data().to_vec(), cell.b_i.data().to_vec(), cell.b_o.data().to_vec(), cell.b_c.data().to_vec()],
        )
    };
    let (w1, b1) = lstm_gates(&m.lstm1);
    let (w2, b2) = lstm_gates(&m.lstm2);
    let g1 = Gates {
        w: [&w1[0], &w1[1], &w1[2], &w1[3]],
        b: [&b1[0], &b1[1], &b1[2], &b1[3]],
    };
    let g2 = Gates {
        w: [&w2[0], &w2[1], &w2[2], &w2[3]],
        b: [&b2[0], &b2[1], &b2[2], &b2[3]],
    };
    let norm = |layer: &GraphNormLayer, h: &Mat| {
        graph_norm_oracle(h, layer.gamma.data(), layer.beta.data(), layer.alpha.data(), layer.eps)
    };
    let mut h1 = vec![vec![0.0; hidden]; n];
    let mut c1 = h1.clone();
    let mut h2 = h1.clone();
    let mut c2 = h1.clone();
    for day in window {
        let a: Mat = (0..n).map(|u| day.adjacency[u * n..(u + 1) * n].to_vec()).collect();
        let x: Mat = day.features.iter().map(|&f| vec![f]).collect();
        let s1 = norm(&m.norm1, &sage_oracle(&x, &a, &rows_of(&m.sage1.w_self), &rows_of(&m.sage1.w_neigh)));
        let s2 = norm(&m.norm2, &sage_oracle(&s1, &a, &rows_of(&m.sage2.w_self), &rows_of(&m.sage2.w_neigh)));
        for v in 0..n {
            let input: Vec<f64> = s1[v].iter().chain(&s2[v]).copied().collect();
            (h1[v], c1[v]) = lstm_oracle(&g1, &h1[v], &c1[v], &input);
            (h2[v], c2[v]) = lstm_oracle(&g2, &h2[v], &c2[v], &h1[v]);
        }
    }
    let w = m.head.w.data();
    let b = m.head.b.data()[0];
    (0..n)
        .map(|v| {
            let z: Vec<f64> = h1[v]
                .iter()
                .chain(&h2[v])
                .copied()
                .chain(window.iter().map(|d| d.features[v]))
                .collect();
            b + z.iter().zip(w).map(|(zi, wi)| zi.max(0.0) * wi).sum::<f64>()
        })
        .collect()
}

pub fn two_day_three_node_model() -> Result<(), String> {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let config = ModelConfig {
            window_len: 2,
            ..ModelConfig::default()
        };
        let mut model = DcsageModel::init(config, seed).unwrap();
        for norm in [&mut model.norm1, &mut model.norm2] {
            norm.gamma = tensor(&rand_mat(&mut rng, 1, config.embed_dim, 0.5, 1.5));
            norm.beta = tensor(&rand_mat(&mut rng, 1, config.embed_dim, -0.5, 0.5));
            norm.alpha = tensor(&rand_mat(&mut rng, 1, config.embed_dim, 0.0, 1.2));
        }
        let window: Vec<DayInput> = (0..2)
            .map(|_| {
                let f = (0..3).map(|_| rng.random_range(0.0..5.0)).collect();
                let a = random_adjacency(&mut rng, 3).concat();
                DayInput::new(f, a)
            })
            .collect();
        let got = model.forward(&window).unwrap();
        let want = model_oracle(&model, &window);
        for (v, (g, w)) in got.iter().zip(&want).enumerate() {
            if (g - w).abs() > TOL {
                return Err(format!("seed {seed} node {v}: {g} vs {w}"));
            }
        }
    }
    Ok(())
}

pub fn ten_node_default_model() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = DcsageModel::init(ModelConfig::default(), 11).unwrap();
    let window: Vec<DayInput> = (0..7)
        .map(|_| {
            let f = (0..10).map(|_| rng.random_range(0.0..5.0)).collect();
            DayInput::new(f, random_adjacency(&mut rng, 10).concat())
        })
        .collect();
    let got = model.forward(&window).unwrap();
    let want = model_oracle(&model, &window);
    for (g, w) in got.iter().zip(&want) {
        if (g - w).abs() > TOL {
            return Err(format!("ten nodes: {g} vs {w}"));
        }
    }
    Ok(())
}
