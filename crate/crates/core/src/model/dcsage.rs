use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    graph_norm, linear, lstm_step, neighbor_coefficients, sage_forward, GraphNormLayer, GraphNormVars, Linear,
    LinearVars, LstmCell, LstmVars, SageLayer, SageVars,
};
use super::ModelError;
use crate::dataio::DailyGraph;
use crate::numerics::{Tape, Tensor, Var};

/// Windows evaluated per tape when predicting; bounds peak memory.
const PREDICT_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Node features per day (daily cases: 1).
    pub input_dim: usize,
    /// Width of both GraphSAGE layers.
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Days per input window.
    pub window_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            embed_dim: 10,
            hidden_dim: 16,
            window_len: 7,
        }
    }
}

impl ModelConfig {
    pub fn head_input_dim(&self) -> usize {
        2 * self.hidden_dim + self.window_len * self.input_dim
    }
}

/// One day of model input: per-node features and the transformed, weighted
/// adjacency (`adjacency[u * n + v]` weights the edge `u -> v`).
#[derive(Debug, Clone, PartialEq)]
pub struct DayInput {
    pub features: Vec<f64>,
    pub adjacency: Arc<[f64]>,
}

impl DayInput {
    pub fn new(features: Vec<f64>, adjacency: Vec<f64>) -> Self {
        Self {
            features,
            adjacency: adjacency.into(),
        }
    }

    pub fn from_graph(g: &DailyGraph) -> Self {
        Self::new(g.cases.clone(), g.flights.clone())
    }

    pub fn nodes(&self) -> usize {
        self.features.len()
    }
}

/// Several windows stacked day by day: `features[t]` is `(batch * nodes) x input_dim`
/// and `coeffs[t]` holds one neighbour-coefficient block per window.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub nodes: usize,
    pub batch: usize,
    pub features: Vec<Tensor>,
    pub coeffs: Vec<Arc<[f64]>>,
}

impl WindowBatch {
    pub fn new(windows: &[&[DayInput]], window_len: usize, input_dim: usize) -> Result<Self, ModelError> {
        let first = windows
            .first()
            .ok_or_else(|| ModelError::Shape("empty window batch".into()))?;
        let nodes = first.first().map(DayInput::nodes).unwrap_or(0);
        if nodes == 0 {
            return Err(ModelError::Shape("window has no nodes".into()));
        }
        for w in windows {
            if w.len() != window_len {
                return Err(ModelError::WindowLength {
                    expected: window_len,
                    got: w.len(),
                });
            }
            for d in w.iter() {
                if d.features.len() != nodes * input_dim || d.adjacency.len() != nodes * nodes {
                    return Err(ModelError::Shape(format!(
                        "day with {} features / {} adjacency entries does not fit {nodes} nodes",
                        d.features.len(),
                        d.adjacency.len()
                    )));
                }
            }
        }
        let mut features = Vec::with_capacity(window_len);
        let mut coeffs = Vec::with_capacity(window_len);
        for t in 0..window_len {
            let mut f = Vec::with_capacity(windows.len() * nodes * input_dim);
            let mut c = Vec::with_capacity(windows.len() * nodes * nodes);
            for w in windows {
                f.extend_from_slice(&w[t].features);
                c.extend(neighbor_coefficients(&w[t].adjacency, nodes)?);
            }
            features.push(Tensor::new(vec![windows.len() * nodes, input_dim], f)?);
            coeffs.push(c.into());
        }
        Ok(Self {
            nodes,
            batch: windows.len(),
            features,
            coeffs,
        })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.nodes
    }
}

/// Tape handles for every parameter of a [`DcsageModel`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub sage1: SageVars,
    pub norm1: GraphNormVars,
    pub sage2: SageVars,
    pub norm2: GraphNormVars,
    pub lstm1: LstmVars,
    pub lstm2: LstmVars,
    pub head: LinearVars,
}

impl ModelVars {
    /// Handles in the canonical parameter order of [`DcsageModel::named_params`].
    pub fn ordered(&self) -> Vec<Var> {
        let lstm = |l: &LstmVars| [l.w_f, l.w_i, l.w_o, l.w_c, l.b_f, l.b_i, l.b_o, l.b_c];
        let mut out = vec![
            self.sage1.w_self,
            self.sage1.w_neigh,
            self.norm1.gamma,
            self.norm1.beta,
            self.norm1.alpha,
            self.sage2.w_self,
            self.sage2.w_neigh,
            self.norm2.gamma,
            self.norm2.beta,
            self.norm2.alpha,
        ];
        out.extend(lstm(&self.lstm1));
        out.extend(lstm(&self.lstm2));
        out.push(self.head.w);
        out.push(self.head.b);
        out
    }
}

/// Two weighted GraphSAGE layers with GraphNorm, two stacked per-node LSTM
/// cells and a linear head over `[h1, h2, input features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DcsageModel {
    pub config: ModelConfig,
    pub sage1: SageLayer,
    pub norm1: GraphNormLayer,
    pub sage2: SageLayer,
    pub norm2: GraphNormLayer,
    pub lstm1: LstmCell,
    pub lstm2: LstmCell,
    pub head: Linear,
}

const LSTM_PARAM_NAMES: [&str; 8] = ["W_f", "W_i", "W_o", "W_C", "b_f", "b_i", "b_o", "b_C"];

impl DcsageModel {
    /// Kaiming-uniform GraphSAGE weights, uniform LSTM and head weights,
    /// identity GraphNorm. Deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = config.embed_dim;
        Ok(Self {
            config,
            sage1: SageLayer::init(config.input_dim, e, &mut rng)?,
            norm1: GraphNormLayer::new(e),
            sage2: SageLayer::init(e, e, &mut rng)?,
            norm2: GraphNormLayer::new(e),
            lstm1: LstmCell::init(2 * e, config.hidden_dim, &mut rng)?,
            lstm2: LstmCell::init(config.hidden_dim, config.hidden_dim, &mut rng)?,
            head: Linear::init(config.head_input_dim(), &mut rng)?,
        })
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (prefix, s, n) in [("1", &self.sage1, &self.norm1), ("2", &self.sage2, &self.norm2)] {
            out.push((format!("sage{prefix}.W_self"), &s.w_self));
            out.push((format!("sage{prefix}.W_neigh"), &s.w_neigh));
            out.push((format!("norm{prefix}.gamma"), &n.gamma));
            out.push((format!("norm{prefix}.beta"), &n.beta));
            out.push((format!("norm{prefix}.alpha"), &n.alpha));
        }
        for (prefix, l) in [("lstm1", &self.lstm1), ("lstm2", &self.lstm2)] {
            let ts = [&l.w_f, &l.w_i, &l.w_o, &l.w_c, &l.b_f, &l.b_i, &l.b_o, &l.b_c];
            for (name, t) in LSTM_PARAM_NAMES.iter().zip(ts) {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out.push(("head.W".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for (s, n) in [(&mut self.sage1, &mut self.norm1), (&mut self.sage2, &mut self.norm2)] {
            out.extend([&mut s.w_self, &mut s.w_neigh, &mut n.gamma, &mut n.beta, &mut n.alpha]);
        }
        for l in [&mut self.lstm1, &mut self.lstm2] {
            out.extend([
                &mut l.w_f, &mut l.w_i, &mut l.w_o, &mut l.w_c, &mut l.b_f, &mut l.b_i, &mut l.b_o, &mut l.b_c,
            ]);
        }
        out.extend([&mut self.head.w, &mut self.head.b]);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }

    /// Rebuilds a model from named tensors, checking names and shapes
    /// against a freshly initialized model of the same configuration.
    pub fn from_named(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let mut model = Self::init(config, 0)?;
        let names = model.param_names();
        if names.len() != tensors.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                tensors.len()
            )));
        }
        for ((expected, slot), (name, t)) in names.iter().zip(model.params_mut()).zip(tensors) {
            if *expected != name {
                return Err(ModelError::Checkpoint(format!("expected tensor `{expected}`, found `{name}`")));
            }
            if slot.shape() != t.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn bind(&self, tape: &mut Tape, tracked: bool) -> Result<ModelVars, ModelError> {
        Ok(ModelVars {
            sage1: self.sage1.bind(tape, tracked)?,
            norm1: self.norm1.bind(tape, tracked)?,
            sage2: self.sage2.bind(tape, tracked)?,
            norm2: self.norm2.bind(tape, tracked)?,
            lstm1: self.lstm1.bind(tape, tracked)?,
            lstm2: self.lstm2.bind(tape, tracked)?,
            head: self.head.bind(tape, tracked)?,
        })
    }

    /// Records the forward pass. `features[t]` are the day-`t` node features
    /// (as tape values so callers can differentiate with respect to them).
    /// Returns a `(batch * nodes) x 1` prediction in the transformed domain.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        features: &[Var],
        coeffs: &[Arc<[f64]>],
        nodes: usize,
    ) -> Result<Var, ModelError> {
        let len = self.config.window_len;
        if features.len() != len || coeffs.len() != len {
            return Err(ModelError::WindowLength {
                expected: len,
                got: features.len(),
            });
        }
        let (rows, _) = tape.value(features[0]).dims2("forward")?;
        let hidden = self.config.hidden_dim;
        let zeros = Tensor::zeros(&[rows, hidden]);
        let mut h1 = tape.constant(zeros.clone())?;
        let mut c1 = tape.constant(zeros.clone())?;
        let mut h2 = tape.constant(zeros.clone())?;
        let mut c2 = tape.constant(zeros)?;

        for (&x, coef) in features.iter().zip(coeffs) {
            let s1 = sage_forward(tape, &vars.sage1, x, coef.clone(), nodes)?;
            let s1 = graph_norm(tape, &vars.norm1, s1, nodes)?;
            let s2 = sage_forward(tape, &vars.sage2, s1, coef.clone(), nodes)?;
            let s2 = graph_norm(tape, &vars.norm2, s2, nodes)?;
            let lstm_in = tape.concat_cols(&[s1, s2])?;
            (h1, c1) = lstm_step(tape, &vars.lstm1, h1, c1, lstm_in)?;
            (h2, c2) = lstm_step(tape, &vars.lstm2, h2, c2, h1)?;
        }

        let mut parts = vec![h1, h2];
        parts.extend_from_slice(features);
        let z = tape.concat_cols(&parts)?;
        let z = tape.relu(z)?;
        linear(tape, &vars.head, z)
    }

    /// Records the forward pass for a prepared batch with constant inputs.
    pub fn forward_batch(&self, tape: &mut Tape, vars: &ModelVars, batch: &WindowBatch) -> Result<Var, ModelError> {
        let features = batch
            .features
            .iter()
            .map(|f| tape.constant(f.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        self.forward_on_tape(tape, vars, &features, &batch.coeffs, batch.nodes)
    }

    /// One-step predictions (transformed domain) for each window.
    pub fn predict(&self, windows: &[&[DayInput]]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(PREDICT_CHUNK) {
            let batch = WindowBatch::new(chunk, self.config.window_len, self.config.input_dim)?;
            let values = self.predict_batch(&batch)?;
            out.extend(values.chunks(batch.nodes).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// One-step prediction for a single window.
    pub fn forward(&self, window: &[DayInput]) -> Result<Vec<f64>, ModelError> {
        Ok(self.predict(&[window])?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(seed: u64, nodes: usize, days: usize) -> Vec<DayInput> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..days)
            .map(|_| {
                let f = (0..nodes).map(|_| rng.random_range(0.0..5.0)).collect();
                let a = (0..nodes * nodes)
                    .map(|k| if k % (nodes + 1) == 0 { 0.0 } else { rng.random_range(0.0..4.0) })
                    .collect();
                DayInput::new(f, a)
            })
            .collect()
    }

    #[test]
    fn deterministic_finite_output() {
        let m = DcsageModel::init(ModelConfig::default(), 5).unwrap();
        let w = window(1, 10, 7);
        let a = m.forward(&w).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|v| v.is_finite()));
        let m2 = DcsageModel::init(ModelConfig::default(), 5).unwrap();
        assert_eq!(a, m2.forward(&w).unwrap());
    }

    #[test]
    fn zero_head_outputs_bias() {
        let mut m = DcsageModel::init(ModelConfig::default(), 9).unwrap();
        m.head.w = Tensor::zeros(m.head.w.shape());
        m.head.b = Tensor::full(&[1, 1], 0.37);
        for s in 0..3 {
            assert!(m.forward(&window(s, 10, 7)).unwrap().iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn wrong_window_length() {
        let m = DcsageModel::init(ModelConfig::default(), 1).unwrap();
        assert!(matches!(
            m.forward(&window(1, 10, 6)),
            Err(ModelError::WindowLength { expected: 7, got: 6 })
        ));
    }

    #[test]
    fn batching_is_bit_identical() {
        let m = DcsageModel::init(ModelConfig::default(), 3).unwrap();
        let ws: Vec<Vec<DayInput>> = (0..5).map(|s| window(s, 10, 7)).collect();
        let refs: Vec<&[DayInput]> = ws.iter().map(Vec::as_slice).collect();
        let batched = m.predict(&refs).unwrap();
        for (w, b) in ws.iter().zip(&batched) {
            assert_eq!(&m.forward(w).unwrap(), b);
        }
    }

    #[test]
    fn eager_matches_tape_bitwise() {
        let mut m = DcsageModel::init(ModelConfig::default(), 11).unwrap();
        // non-trivial GraphNorm parameters
        m.norm1.alpha = Tensor::full(&[1, 10], 0.3);
        m.norm2.gamma = Tensor::full(&[1, 10], 1.7);
        m.norm2.beta = Tensor::full(&[1, 10], -0.2);
        let ws: Vec<Vec<DayInput>> = (0..4).map(|s| window(100 + s, 10, 7)).collect();
        let refs: Vec<&[DayInput]> = ws.iter().map(Vec::as_slice).collect();
        let batch = WindowBatch::new(&refs, 7, 1).unwrap();
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, false).unwrap();
        let y = m.forward_batch(&mut tape, &vars, &batch).unwrap();
        assert_eq!(tape.value(y).data(), m.predict_batch(&batch).unwrap().as_slice());
    }

    #[test]
    fn named_round_trip() {
        let m = DcsageModel::init(ModelConfig::default(), 8).unwrap();
        let named = m.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect();
        assert_eq!(DcsageModel::from_named(m.config, named).unwrap(), m);
    }
}
