//! Full-batch ensemble training with the MASE loss and Adam.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{DatasetSplit, WindowSample};
use crate::model::{write_atomic, CheckpointMeta, DayInput, DcsageModel, ModelCheckpoint, ModelConfig, ModelError, WindowBatch};
use crate::numerics::{AdamState, OptimError, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("the {0} set is empty")]
    EmptySplit(&'static str),
    #[error("targets sum to zero; the loss is undefined")]
    ZeroTargets,
    #[error("prediction and target lengths differ ({pred} vs {target})")]
    LengthMismatch { pred: usize, target: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("optimizer failed at epoch {epoch}: {source}")]
    Optimizer { epoch: usize, source: OptimError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("ensemble member with seed {seed} failed: {source}")]
    Member { seed: u64, source: Box<TrainError> },
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_patience: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub ensemble_size: usize,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-2,
            lr_decay_patience: 40,
            lr_decay_factor: 0.5,
            seed: 0,
            ensemble_size: 100,
            hidden_dim: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad("lr_decay_factor must lie in (0, 1)");
        }
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be at least 1");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            ..ModelConfig::default()
        }
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Mean absolute gradient of one layer's parameters, one value per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGradients {
    pub layer: String,
    pub mean_abs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    /// Full-batch training loss before the update of each epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss after the update of each epoch.
    pub val_loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub grad_flow: Vec<LayerGradients>,
    /// Zero-based epoch whose parameters were kept.
    pub selected_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `sum |pred - target| / sum target` with the target held constant.
pub fn mase_loss(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var, TrainError> {
    let total: f64 = target.data().iter().sum();
    if total == 0.0 {
        return Err(TrainError::ZeroTargets);
    }
    let y = tape.constant(target.clone())?;
    let diff = tape.sub(pred, y)?;
    let abs = tape.unary(crate::numerics::UnaryOp::Abs, diff)?;
    let sum = tape.sum(abs)?;
    Ok(tape.scale(sum, 1.0 / total)?)
}

pub fn mase(pred: &[f64], target: &[f64]) -> Result<f64, TrainError> {
    if pred.len() != target.len() {
        return Err(TrainError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    let total: f64 = target.iter().sum();
    if total == 0.0 {
        return Err(TrainError::ZeroTargets);
    }
    let err: f64 = pred.iter().zip(target).map(|(p, y)| (p - y).abs()).sum();
    Ok(err / total)
}

pub fn window_inputs(window: &WindowSample) -> Vec<DayInput> {
    window.graphs.iter().map(DayInput::from_graph).collect()
}

/// Windows prepared once: model inputs plus the flattened targets.
#[derive(Debug, Clone)]
pub struct PreparedWindows {
    pub inputs: Vec<Vec<DayInput>>,
    pub targets: Vec<f64>,
}

impl PreparedWindows {
    pub fn new(windows: &[WindowSample]) -> Self {
        Self {
            inputs: windows.iter().map(window_inputs).collect(),
            targets: windows.iter().flat_map(|w| w.target.iter().copied()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn refs(&self) -> Vec<&[DayInput]> {
        self.inputs.iter().map(Vec::as_slice).collect()
    }

    pub fn predict(&self, model: &DcsageModel) -> Result<Vec<f64>, TrainError> {
        Ok(model.predict(&self.refs())?.concat())
    }

    pub fn loss(&self, model: &DcsageModel) -> Result<f64, TrainError> {
        mase(&self.predict(model)?, &self.targets)
    }
}

fn layer_of(param: &str) -> &str {
    param.split('.').next().unwrap_or(param)
}

/// Trains one model. Each epoch: forward, loss, backward, Adam step,
/// validation loss, and a snapshot whenever validation strictly improves.
pub fn train_one(split: &DatasetSplit, config: &TrainConfig, seed: u64) -> Result<(ModelCheckpoint, TrainReport), TrainError> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if split.validation.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let train = PreparedWindows::new(&split.train);
    let val = PreparedWindows::new(&split.validation);
    let model_config = config.model_config();
    let batch = WindowBatch::new(&train.refs(), model_config.window_len, model_config.input_dim)?;
    let target = Tensor::new(vec![train.targets.len(), 1], train.targets.clone())?;

    let mut model = DcsageModel::init(model_config, seed)?;
    let names = model.param_names();
    let mut layers: Vec<String> = Vec::new();
    for n in &names {
        let l = layer_of(n);
        if layers.last().map(String::as_str) != Some(l) {
            layers.push(l.to_string());
        }
    }
    let mut adam = AdamState::new(config.lr, model.named_params().into_iter().map(|(_, t)| t));

    let mut report = TrainReport {
        seed,
        train_loss: Vec::with_capacity(config.epochs),
        val_loss: Vec::with_capacity(config.epochs),
        learning_rate: Vec::with_capacity(config.epochs),
        grad_flow: layers
            .iter()
            .map(|l| LayerGradients {
                layer: l.clone(),
                mean_abs: Vec::with_capacity(config.epochs),
            })
            .collect(),
        selected_epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    let mut best = model.clone();
    let mut bad_epochs = 0;

    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true)?;
        let pred = model
            .forward_batch(&mut tape, &vars, &batch)
            .map_err(|e| non_finite(e, epoch))?;
        let loss = mase_loss(&mut tape, pred, &target).map_err(|e| match e {
            TrainError::Model(m) => non_finite(m, epoch),
            other => other,
        })?;
        let loss_value = tape.value(loss).item().unwrap_or(f64::NAN);
        if !loss_value.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        let grads = tape.backward(loss).map_err(|_| TrainError::NonFiniteLoss { epoch })?;
        let grad_list: Vec<&Tensor> = vars
            .ordered()
            .into_iter()
            .map(|v| grads.get(v).expect("every tracked parameter has a gradient"))
            .collect();

        let mut sums = vec![(0.0, 0usize); layers.len()];
        for (name, g) in names.iter().zip(&grad_list) {
            let i = layers.iter().position(|l| l == layer_of(name)).expect("known layer");
            sums[i].0 += g.data().iter().map(|x| x.abs()).sum::<f64>();
            sums[i].1 += g.len();
        }
        for (lg, (s, n)) in report.grad_flow.iter_mut().zip(sums) {
            lg.mean_abs.push(s / n as f64);
        }

        report.learning_rate.push(adam.lr);
        {
            let mut params: Vec<(&str, &mut Tensor)> = names.iter().map(String::as_str).zip(model.params_mut()).collect();
            adam.step(&mut params, &grad_list)
                .map_err(|source| TrainError::Optimizer { epoch, source })?;
        }
        drop(tape);

        let v = val.loss(&model).map_err(|e| match e {
            TrainError::Model(m) => non_finite(m, epoch),
            other => other,
        })?;
        if !v.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        report.train_loss.push(loss_value);
        report.val_loss.push(v);
        if v < report.best_val_loss {
            report.best_val_loss = v;
            report.selected_epoch = epoch;
            best = model.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.lr_decay_patience {
                adam.lr *= config.lr_decay_factor;
                bad_epochs = 0;
            }
        }
    }

    let checkpoint = ModelCheckpoint {
        model: best,
        meta: CheckpointMeta {
            seed,
            hidden_dim: config.hidden_dim,
            config_hash: config.hash(),
            member_index: None,
            selected_epoch: Some(report.selected_epoch),
            validation_loss: Some(report.best_val_loss),
        },
    };
    Ok((checkpoint, report))
}

fn non_finite(e: ModelError, epoch: usize) -> TrainError {
    match e {
        ModelError::Tensor(TensorError::NonFinite { .. }) => TrainError::NonFiniteLoss { epoch },
        other => TrainError::Model(other),
    }
}

/// One trained ensemble member.
#[derive(Debug, Clone)]
pub struct Member {
    pub checkpoint: ModelCheckpoint,
    pub report: TrainReport,
}

/// Trains `ensemble_size` members with seeds `seed, seed + 1, ...`.
/// Results are in seed order regardless of scheduling.
pub fn train_ensemble(split: &DatasetSplit, config: &TrainConfig) -> Result<Vec<Member>, TrainError> {
    config.validate()?;
    (0..config.ensemble_size)
        .into_par_iter()
        .map(|i| {
            let seed = config.seed.wrapping_add(i as u64);
            let (mut checkpoint, report) = train_one(split, config, seed).map_err(|e| TrainError::Member {
                seed,
                source: Box::new(e),
            })?;
            checkpoint.meta.member_index = Some(i);
            Ok(Member { checkpoint, report })
        })
        .collect()
}

pub fn member_checkpoint_name(index: usize) -> String {
    format!("member_{index:03}.ckpt")
}

pub fn member_report_name(index: usize) -> String {
    format!("member_{index:03}.report.json")
}

/// Writes `member_NNN.ckpt` and `member_NNN.report.json` for every member.
pub fn save_ensemble(members: &[Member], dir: &Path) -> Result<(), TrainError> {
    let io = |p: &Path, e: String| TrainError::Io {
        path: p.display().to_string(),
        message: e,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e.to_string()))?;
    for (i, m) in members.iter().enumerate() {
        let path = dir.join(member_checkpoint_name(i));
        m.checkpoint.save(&path).map_err(|e| io(&path, e.to_string()))?;
        let path = dir.join(member_report_name(i));
        write_atomic(&path, m.report.to_json().as_bytes()).map_err(|e| io(&path, e.to_string()))?;
    }
    Ok(())
}

/// Loads every `member_NNN.ckpt` in index order.
pub fn load_ensemble(dir: &Path) -> Result<Vec<DcsageModel>, TrainError> {
    let mut models = Vec::new();
    loop {
        let path = dir.join(member_checkpoint_name(models.len()));
        if !path.exists() {
            break;
        }
        models.push(ModelCheckpoint::load(&path)?.model);
    }
    if models.is_empty() {
        return Err(TrainError::Io {
            path: dir.display().to_string(),
            message: "no checkpoints found".into(),
        });
    }
    Ok(models)
}
