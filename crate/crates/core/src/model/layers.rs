//! Building blocks of the network and their forward passes on a [`Tape`].
//!
//! Node embeddings are stored as `(graphs * nodes) x features` matrices: the
//! rows of several independent graphs are stacked, and every graph-level
//! statistic (neighbourhood mean, normalization) is taken per block of
//! `nodes` rows.

use std::sync::Arc;

use rand::Rng;

use super::ModelError;
use crate::numerics::{kaiming_uniform, uniform, Tape, Tensor, Var};

fn leaf(tape: &mut Tape, t: &Tensor, tracked: bool) -> Result<Var, ModelError> {
    Ok(if tracked {
        tape.param(t.clone())?
    } else {
        tape.constant(t.clone())?
    })
}

/// Mean-aggregation coefficients for one graph: entry `[v * n + u]` is
/// `A[u][v] / |N(v)|` with `N(v) = {u : A[u][v] > 0}` (in-neighbours).
pub fn neighbor_coefficients(adjacency: &[f64], nodes: usize) -> Result<Vec<f64>, ModelError> {
    if adjacency.len() != nodes * nodes {
        return Err(ModelError::Shape(format!(
            "adjacency has {} entries, expected {}",
            adjacency.len(),
            nodes * nodes
        )));
    }
    let mut coeffs = vec![0.0; nodes * nodes];
    for v in 0..nodes {
        let mut count = 0usize;
        for u in 0..nodes {
            let w = adjacency[u * nodes + v];
            if w < 0.0 || !w.is_finite() {
                return Err(ModelError::NegativeWeight { src: u, dst: v, weight: w });
            }
            if w > 0.0 {
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        for u in 0..nodes {
            coeffs[v * nodes + u] = adjacency[u * nodes + v] / count as f64;
        }
    }
    Ok(coeffs)
}

/// Weighted GraphSAGE layer without bias: `ReLU(h_v W_self + h_N(v) W_neigh)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SageLayer {
    /// `in_dim x out_dim`, applied to the node's own embedding.
    pub w_self: Tensor,
    /// `in_dim x out_dim`, applied to the aggregated neighbour embedding.
    pub w_neigh: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct SageVars {
    pub w_self: Var,
    pub w_neigh: Var,
}

impl SageLayer {
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self, ModelError> {
        Ok(Self {
            w_self: kaiming_uniform(&[in_dim, out_dim], in_dim, rng)?,
            w_neigh: kaiming_uniform(&[in_dim, out_dim], in_dim, rng)?,
        })
    }

    pub fn bind(&self, tape: &mut Tape, tracked: bool) -> Result<SageVars, ModelError> {
        Ok(SageVars {
            w_self: leaf(tape, &self.w_self, tracked)?,
            w_neigh: leaf(tape, &self.w_neigh, tracked)?,
        })
    }

    /// Eager evaluation on a single graph: `h` is `nodes x in_dim`,
    /// `adjacency` is `nodes x nodes` with entry `(u, v)` weighting `u -> v`.
    pub fn forward(&self, h: &Tensor, adjacency: &Tensor) -> Result<Tensor, ModelError> {
        let (nodes, _) = h.dims2("sage_forward")?;
        let coeffs: Arc<[f64]> = neighbor_coefficients(adjacency.data(), nodes)?.into();
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let hv = tape.constant(h.clone())?;
        let out = sage_forward(&mut tape, &vars, hv, coeffs, nodes)?;
        Ok(tape.value(out).clone())
    }
}

/// `coeffs` holds one [`neighbor_coefficients`] block per stacked graph.
pub fn sage_forward(tape: &mut Tape, layer: &SageVars, h: Var, coeffs: Arc<[f64]>, nodes: usize) -> Result<Var, ModelError> {
    let agg = tape.block_matmul(coeffs, nodes, h)?;
    let own = tape.matmul(h, layer.w_self)?;
    let neigh = tape.matmul(agg, layer.w_neigh)?;
    let pre = tape.add(own, neigh)?;
    Ok(tape.relu(pre)?)
}

/// GraphNorm with learnable scale `gamma`, shift `beta` and mean weight `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub alpha: Tensor,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GraphNormVars {
    pub gamma: Var,
    pub beta: Var,
    pub alpha: Var,
    pub eps: f64,
}

pub const GRAPH_NORM_EPS: f64 = 1e-5;

impl GraphNormLayer {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::full(&[1, dim], 1.0),
            beta: Tensor::zeros(&[1, dim]),
            alpha: Tensor::full(&[1, dim], 1.0),
            eps: GRAPH_NORM_EPS,
        }
    }

    pub fn bind(&self, tape: &mut Tape, tracked: bool) -> Result<GraphNormVars, ModelError> {
        Ok(GraphNormVars {
            gamma: leaf(tape, &self.gamma, tracked)?,
            beta: leaf(tape, &self.beta, tracked)?,
            alpha: leaf(tape, &self.alpha, tracked)?,
            eps: self.eps,
        })
    }

    /// Eager evaluation on a single `nodes x dim` graph.
    pub fn forward(&self, h: &Tensor) -> Result<Tensor, ModelError> {
        let (nodes, _) = h.dims2("graph_norm")?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let hv = tape.constant(h.clone())?;
        let out = graph_norm(&mut tape, &vars, hv, nodes)?;
        Ok(tape.value(out).clone())
    }
}

/// `gamma * (h - alpha * mean) / sqrt(var + eps) + beta`, with the mean and
/// (population) variance of each feature taken over the nodes of each graph.
pub fn graph_norm(tape: &mut Tape, layer: &GraphNormVars, h: Var, nodes: usize) -> Result<Var, ModelError> {
    let mean = tape.segment_mean(h, nodes)?;
    let mean_rows = tape.segment_repeat(mean, nodes)?;
    let centered = tape.sub(h, mean_rows)?;
    let sq = tape.unary(crate::numerics::UnaryOp::Square, centered)?;
    let var = tape.segment_mean(sq, nodes)?;
    let var_eps = tape.shift(var, layer.eps)?;
    let std = tape.unary(crate::numerics::UnaryOp::Sqrt, var_eps)?;
    let std_rows = tape.segment_repeat(std, nodes)?;
    let shifted_mean = tape.mul_row(mean_rows, layer.alpha)?;
    let numer = tape.sub(h, shifted_mean)?;
    let normed = tape.div(numer, std_rows)?;
    let scaled = tape.mul_row(normed, layer.gamma)?;
    Ok(tape.add_row(scaled, layer.beta)?)
}

/// LSTM cell whose gate weights act on `concat[h_prev, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_f: Tensor,
    pub w_i: Tensor,
    pub w_o: Tensor,
    pub w_c: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_o: Tensor,
    pub b_c: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_f: Var,
    pub w_i: Var,
    pub w_o: Var,
    pub w_c: Var,
    pub b_f: Var,
    pub b_i: Var,
    pub b_o: Var,
    pub b_c: Var,
}

impl LstmCell {
    /// Uniform `U(-1/sqrt(hidden), 1/sqrt(hidden))` initialization.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Result<Self, ModelError> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = |rng: &mut R| uniform(&[hidden + input_dim, hidden], bound, rng);
        let b = |rng: &mut R| uniform(&[1, hidden], bound, rng);
        Ok(Self {
            w_f: w(rng)?,
            w_i: w(rng)?,
            w_o: w(rng)?,
            w_c: w(rng)?,
            b_f: b(rng)?,
            b_i: b(rng)?,
            b_o: b(rng)?,
            b_c: b(rng)?,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_f.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_f.shape()[0] - self.hidden_dim()
    }

    pub fn bind(&self, tape: &mut Tape, tracked: bool) -> Result<LstmVars, ModelError> {
        Ok(LstmVars {
            w_f: leaf(tape, &self.w_f, tracked)?,
            w_i: leaf(tape, &self.w_i, tracked)?,
            w_o: leaf(tape, &self.w_o, tracked)?,
            w_c: leaf(tape, &self.w_c, tracked)?,
            b_f: leaf(tape, &self.b_f, tracked)?,
            b_i: leaf(tape, &self.b_i, tracked)?,
            b_o: leaf(tape, &self.b_o, tracked)?,
            b_c: leaf(tape, &self.b_c, tracked)?,
        })
    }

    /// Eager single step on `rows x dim` matrices; returns `(h, c)`.
    pub fn step(&self, h_prev: &Tensor, c_prev: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor), ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let h = tape.constant(h_prev.clone())?;
        let c = tape.constant(c_prev.clone())?;
        let xv = tape.constant(x.clone())?;
        let (h2, c2) = lstm_step(&mut tape, &vars, h, c, xv)?;
        Ok((tape.value(h2).clone(), tape.value(c2).clone()))
    }
}

/// One LSTM update for every row:
/// gates from `concat[h_prev, x]`, `C = f*C_prev + i*C_hat`, `h = o*tanh(C)`.
pub fn lstm_step(tape: &mut Tape, cell: &LstmVars, h_prev: Var, c_prev: Var, x: Var) -> Result<(Var, Var), ModelError> {
    let hx = tape.concat_cols(&[h_prev, x])?;
    let mut gate = |w: Var, b: Var| -> Result<Var, ModelError> {
        let z = tape.matmul(hx, w)?;
        Ok(tape.add_row(z, b)?)
    };
    let f_pre = gate(cell.w_f, cell.b_f)?;
    let i_pre = gate(cell.w_i, cell.b_i)?;
    let o_pre = gate(cell.w_o, cell.b_o)?;
    let c_pre = gate(cell.w_c, cell.b_c)?;
    let f = tape.sigmoid(f_pre)?;
    let i = tape.sigmoid(i_pre)?;
    let o = tape.sigmoid(o_pre)?;
    let c_hat = tape.tanh(c_pre)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, c_hat)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c)?;
    let h = tape.mul(o, c_act)?;
    Ok((h, c))
}

/// Per-node linear read-out with a single output neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in_dim x 1`
    pub w: Tensor,
    /// `1 x 1`
    pub b: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(in_dim: usize, rng: &mut R) -> Result<Self, ModelError> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            w: uniform(&[in_dim, 1], bound, rng)?,
            b: uniform(&[1, 1], bound, rng)?,
        })
    }

    pub fn bind(&self, tape: &mut Tape, tracked: bool) -> Result<LinearVars, ModelError> {
        Ok(LinearVars {
            w: leaf(tape, &self.w, tracked)?,
            b: leaf(tape, &self.b, tracked)?,
        })
    }
}

pub fn linear(tape: &mut Tape, layer: &LinearVars, x: Var) -> Result<Var, ModelError> {
    let z = tape.matmul(x, layer.w)?;
    Ok(tape.add_row(z, layer.b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficients_average_in_neighbours() {
        // 0 -> 2 (w=2), 1 -> 2 (w=4); node 2 averages over two in-neighbours
        let mut adj = vec![0.0; 9];
        adj[2] = 2.0;
        adj[5] = 4.0;
        let c = neighbor_coefficients(&adj, 3).unwrap();
        assert_eq!(&c[6..9], &[1.0, 2.0, 0.0]);
        assert!(c[..6].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_weight_rejected() {
        let mut adj = vec![0.0; 4];
        adj[1] = -1.0;
        assert!(matches!(
            neighbor_coefficients(&adj, 2),
            Err(ModelError::NegativeWeight { src: 0, dst: 1, .. })
        ));
    }

    #[test]
    fn empty_neighbourhood_uses_self_only() {
        let layer = SageLayer {
            w_self: Tensor::from_rows(&[vec![2.0, -1.0]]).unwrap(),
            w_neigh: Tensor::from_rows(&[vec![5.0, 5.0]]).unwrap(),
        };
        let h = Tensor::column(&[1.0, 3.0]);
        let out = layer.forward(&h, &Tensor::zeros(&[2, 2])).unwrap();
        assert_eq!(out.data(), &[2.0, 0.0, 6.0, 0.0]);
    }

    #[test]
    fn single_edge_passes_neighbour() {
        let layer = SageLayer {
            w_self: Tensor::from_rows(&[vec![0.0]]).unwrap(),
            w_neigh: Tensor::from_rows(&[vec![1.0]]).unwrap(),
        };
        let h = Tensor::column(&[4.0, 0.5]);
        let mut adj = Tensor::zeros(&[2, 2]);
        adj.data_mut()[1] = 1.0; // 0 -> 1
        let out = layer.forward(&h, &adj).unwrap();
        assert_eq!(out.data(), &[0.0, 4.0]);
    }

    #[test]
    fn graph_norm_pure_scale() {
        let mut layer = GraphNormLayer::new(1);
        layer.alpha = Tensor::zeros(&[1, 1]);
        let h = Tensor::column(&[1.0, 2.0, 3.0, 6.0]);
        let out = layer.forward(&h).unwrap();
        let mean = 3.0;
        let var = [1.0f64, 2.0, 3.0, 6.0].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        let sigma = (var + GRAPH_NORM_EPS).sqrt();
        for (o, x) in out.data().iter().zip(h.data()) {
            assert!((o - x / sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_norm_constant_column() {
        let mut layer = GraphNormLayer::new(1);
        layer.beta = Tensor::full(&[1, 1], 5.0);
        let out = layer.forward(&Tensor::column(&[3.0; 10])).unwrap();
        assert!(out.data().iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    fn zero_cell(input: usize, hidden: usize) -> LstmCell {
        let w = Tensor::zeros(&[hidden + input, hidden]);
        let b = Tensor::zeros(&[1, hidden]);
        LstmCell {
            w_f: w.clone(),
            w_i: w.clone(),
            w_o: w.clone(),
            w_c: w,
            b_f: b.clone(),
            b_i: b.clone(),
            b_o: b.clone(),
            b_c: b,
        }
    }

    #[test]
    fn zero_cell_from_zero_state() {
        let cell = zero_cell(2, 3);
        let (h, c) = cell
            .step(&Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 3]), &Tensor::row(&[0.7, -2.0]))
            .unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_cell_halves_memory() {
        let cell = zero_cell(1, 2);
        let c0 = Tensor::row(&[0.8, -3.0]);
        let (h, c) = cell.step(&Tensor::zeros(&[1, 2]), &c0, &Tensor::row(&[1.0])).unwrap();
        for j in 0..2 {
            let expect_c = 0.5 * c0.data()[j];
            assert!((c.data()[j] - expect_c).abs() < 1e-15);
            assert!((h.data()[j] - 0.5 * expect_c.tanh()).abs() < 1e-15);
        }
    }
}
