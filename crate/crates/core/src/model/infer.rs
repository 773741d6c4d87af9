//! Gradient-free forward pass over a [`WindowBatch`].
//!
//! Performs the same floating-point operations in the same order as the
//! taped forward pass, so both produce bit-identical predictions, but keeps
//! only the current recurrent state instead of every intermediate.

use super::layers::{GraphNormLayer, LstmCell, SageLayer};
use super::{DcsageModel, ModelError, WindowBatch};
use crate::numerics::{matmul_into, sigmoid, TensorError};

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_into(a, b, &mut out, m, k, n);
    out
}

fn sage(layer: &SageLayer, h: &[f64], coeffs: &[f64], nodes: usize, rows: usize) -> Vec<f64> {
    let in_dim = h.len() / rows;
    let out_dim = layer.w_self.shape()[1];
    let mut agg = vec![0.0; rows * in_dim];
    for g in 0..rows / nodes {
        let span = g * nodes * in_dim..(g + 1) * nodes * in_dim;
        matmul_into(
            &coeffs[g * nodes * nodes..(g + 1) * nodes * nodes],
            &h[span.clone()],
            &mut agg[span],
            nodes,
            nodes,
            in_dim,
        );
    }
    let own = matmul(h, layer.w_self.data(), rows, in_dim, out_dim);
    let neigh = matmul(&agg, layer.w_neigh.data(), rows, in_dim, out_dim);
    own.iter().zip(&neigh).map(|(a, b)| (a + b).max(0.0)).collect()
}

fn graph_norm(layer: &GraphNormLayer, h: &[f64], nodes: usize, rows: usize) -> Vec<f64> {
    let d = h.len() / rows;
    let (gamma, beta, alpha) = (layer.gamma.data(), layer.beta.data(), layer.alpha.data());
    let mut out = vec![0.0; h.len()];
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for g in 0..rows / nodes {
        let block = &h[g * nodes * d..(g + 1) * nodes * d];
        mean.iter_mut().for_each(|m| *m = 0.0);
        var.iter_mut().for_each(|v| *v = 0.0);
        for row in block.chunks_exact(d) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= nodes as f64;
        }
        for row in block.chunks_exact(d) {
            for j in 0..d {
                let c = row[j] - mean[j];
                var[j] += c * c;
            }
        }
        for v in var.iter_mut() {
            *v = (*v / nodes as f64 + layer.eps).sqrt();
        }
        let out_block = &mut out[g * nodes * d..(g + 1) * nodes * d];
        for (orow, row) in out_block.chunks_exact_mut(d).zip(block.chunks_exact(d)) {
            for j in 0..d {
                let numer = row[j] - mean[j] * alpha[j];
                orow[j] = numer / var[j] * gamma[j] + beta[j];
            }
        }
    }
    out
}

/// Advances `h` and `c` in place given the step input `x`.
fn lstm(cell: &LstmCell, h: &mut [f64], c: &mut [f64], x: &[f64], rows: usize) {
    let hidden = cell.hidden_dim();
    let in_dim = x.len() / rows;
    let width = hidden + in_dim;
    let mut hx = vec![0.0; rows * width];
    for i in 0..rows {
        hx[i * width..i * width + hidden].copy_from_slice(&h[i * hidden..(i + 1) * hidden]);
        hx[i * width + hidden..(i + 1) * width].copy_from_slice(&x[i * in_dim..(i + 1) * in_dim]);
    }
    let gate = |w: &[f64], b: &[f64]| {
        let mut z = matmul(&hx, w, rows, width, hidden);
        for row in z.chunks_exact_mut(hidden) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        z
    };
    let f = gate(cell.w_f.data(), cell.b_f.data());
    let i_ = gate(cell.w_i.data(), cell.b_i.data());
    let o = gate(cell.w_o.data(), cell.b_o.data());
    let ch = gate(cell.w_c.data(), cell.b_c.data());
    for k in 0..rows * hidden {
        let keep = sigmoid(f[k]) * c[k];
        let write = sigmoid(i_[k]) * ch[k].tanh();
        c[k] = keep + write;
        h[k] = sigmoid(o[k]) * c[k].tanh();
    }
}

impl DcsageModel {
    /// One-step predictions for every stacked row of `batch`, in the
    /// transformed domain.
    pub fn predict_batch(&self, batch: &WindowBatch) -> Result<Vec<f64>, ModelError> {
        let len = self.config.window_len;
        if batch.features.len() != len || batch.coeffs.len() != len {
            return Err(ModelError::WindowLength {
                expected: len,
                got: batch.features.len(),
            });
        }
        let rows = batch.rows();
        let nodes = batch.nodes;
        let hidden = self.config.hidden_dim;
        let mut h1 = vec![0.0; rows * hidden];
        let mut c1 = vec![0.0; rows * hidden];
        let mut h2 = vec![0.0; rows * hidden];
        let mut c2 = vec![0.0; rows * hidden];
        let e = self.config.embed_dim;
        let mut lstm_in = vec![0.0; rows * 2 * e];
        for (x, coef) in batch.features.iter().zip(&batch.coeffs) {
            let s1 = graph_norm(&self.norm1, &sage(&self.sage1, x.data(), coef, nodes, rows), nodes, rows);
            let s2 = graph_norm(&self.norm2, &sage(&self.sage2, &s1, coef, nodes, rows), nodes, rows);
            for i in 0..rows {
                lstm_in[i * 2 * e..i * 2 * e + e].copy_from_slice(&s1[i * e..(i + 1) * e]);
                lstm_in[i * 2 * e + e..(i + 1) * 2 * e].copy_from_slice(&s2[i * e..(i + 1) * e]);
            }
            lstm(&self.lstm1, &mut h1, &mut c1, &lstm_in, rows);
            lstm(&self.lstm2, &mut h2, &mut c2, &h1, rows);
        }

        let input_dim = self.config.input_dim;
        let width = self.config.head_input_dim();
        let w = self.head.w.data();
        let b = self.head.b.data()[0];
        let mut out = Vec::with_capacity(rows);
        let mut z = vec![0.0; width];
        for i in 0..rows {
            z[..hidden].copy_from_slice(&h1[i * hidden..(i + 1) * hidden]);
            z[hidden..2 * hidden].copy_from_slice(&h2[i * hidden..(i + 1) * hidden]);
            for (t, x) in batch.features.iter().enumerate() {
                let at = 2 * hidden + t * input_dim;
                z[at..at + input_dim].copy_from_slice(&x.data()[i * input_dim..(i + 1) * input_dim]);
            }
            let mut y = 0.0;
            for (zv, wv) in z.iter().zip(w) {
                y += zv.max(0.0) * wv;
            }
            out.push(y + b);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "forward" }.into());
        }
        Ok(out)
    }
}
