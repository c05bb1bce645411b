//! Loss, Adam, the training loop and the finite-difference gradient checker.

mod gradcheck;

pub use gradcheck::{
    grad_check, registered_checks, run_checks, GradCheckReport, SignFlip, TensorCheck, KINK_MARGIN,
    MAX_COORDS, REL_FLOOR, STEP,
};

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{self, DataError, NormStats, Trajectory, WindowBatch};
use crate::eval::{self, EvalError};
use crate::nn::{Mode, Module, Network, NnError, Param, Rng};
use crate::tensor::{Tensor, TensorError};
use crate::Real;

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("epoch hook failed: {0}")]
    Hook(Box<dyn std::error::Error + Send + Sync>),
}

impl From<TensorError> for OptimError {
    fn from(e: TensorError) -> Self {
        OptimError::Nn(e.into())
    }
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// Mean squared error over a `[B, 1]` batch and its gradient `(2/B)(pred - target)`.
pub fn mse_loss(
    pred: &Tensor,
    target: &Tensor,
) -> std::result::Result<(Real, Tensor), TensorError> {
    let diff = pred.sub(target)?;
    let n = diff.len().max(1) as Real;
    let loss = diff.data().iter().map(|d| d * d).sum::<Real>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    /// Parameters and Adam moments are rounded to single precision after
    /// initialization and after every update; arithmetic still runs in f64.
    /// This is the state a checkpoint holds, so resumed runs stay bit-exact.
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
    pub clip_norm: Option<Real>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

/// Adam moments, one pair per parameter tensor in network order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// One bias-corrected Adam update using the gradients currently stored in
    /// `params`, after optional global-norm clipping. Gradients are zeroed.
    pub fn update(&mut self, mut params: Vec<&mut Param>, config: &AdamConfig) -> Result<()> {
        if self.m.is_empty() && self.step == 0 {
            self.m = params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(&params)
                .any(|(m, p)| m.shape() != p.value.shape())
        {
            return Err(OptimError::Usage(
                "optimizer state does not match the parameter list".into(),
            ));
        }
        let clip = match config.clip_norm {
            Some(max) => {
                let norm = params
                    .iter()
                    .flat_map(|p| p.grad.data())
                    .map(|g| g * g)
                    .sum::<Real>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data().to_vec();
            let values = p.value.data_mut();
            for (((w, g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g * clip;
                *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Adam step on a network. Fails unless a backward pass has populated the
/// gradients since the previous step.
pub fn adam_step(net: &mut Network, adam: &mut Adam, config: &AdamConfig) -> Result<()> {
    if !net.has_gradients() {
        return Err(OptimError::Usage(
            "optimizer step requested before any backward pass".into(),
        ));
    }
    adam.update(net.params_mut(), config)?;
    net.clear_gradient_flag();
    Ok(())
}

fn round_to_f32(net: &mut Network, adam: &mut Adam) {
    let moments = adam.m.iter_mut().chain(adam.v.iter_mut());
    for t in net
        .params_mut()
        .into_iter()
        .map(|p| &mut p.value)
        .chain(moments)
    {
        for v in t.data_mut() {
            *v = *v as f32 as Real;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops training after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub augment: bool,
    pub lambda: usize,
    pub r_max: Real,
    pub stride: usize,
    pub clip_norm: Option<Real>,
    /// Fraction of training engines held out for validation.
    pub validation_fraction: Real,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 32,
            epochs: 10,
            max_steps: None,
            seed: 0,
            augment: true,
            lambda: 2,
            r_max: data::DEFAULT_R_MAX,
            stride: 1,
            clip_norm: None,
            validation_fraction: 0.0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, expected: &str, got: String| {
            Err(OptimError::Usage(format!(
                "{key} must be {expected}, got {got}"
            )))
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(
                "learning_rate",
                "a positive number",
                self.learning_rate.to_string(),
            );
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "in [0, 1)", self.beta1.to_string());
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "in [0, 1)", self.beta2.to_string());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "positive", self.epsilon.to_string());
        }
        if self.batch_size == 0 {
            return bad("batch_size", ">= 1", "0".into());
        }
        if self.lambda == 0 {
            return bad("lambda", "a positive integer", "0".into());
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return bad("r_max", "a positive number", self.r_max.to_string());
        }
        if self.stride == 0 {
            return bad("stride", ">= 1", "0".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm", "positive", c.to_string());
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(
                "validation_fraction",
                "in [0, 1)",
                self.validation_fraction.to_string(),
            );
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            clip_norm: self.clip_norm,
        }
    }

    /// `key=value` lines in field order, used as the checkpoint config snapshot.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let value = serde_json::to_value(self).expect("config serializes");
        let fields = [
            "learning_rate",
            "beta1",
            "beta2",
            "epsilon",
            "batch_size",
            "epochs",
            "max_steps",
            "seed",
            "augment",
            "lambda",
            "r_max",
            "stride",
            "clip_norm",
            "validation_fraction",
            "precision",
        ];
        for key in fields {
            let v = &value[key];
            let text = match v {
                serde_json::Value::Null => "none".to_string(),
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{key}={text}");
        }
        out
    }
}

/// Training windows for a fleet: normalize, build capped targets, optionally
/// add `lambda` random truncations per engine, then cut windows at `stride`.
pub fn build_dataset(
    trajs: &[Trajectory],
    stats: &NormStats,
    seq_len: usize,
    config: &TrainConfig,
) -> Result<WindowBatch> {
    let normalized: Vec<Trajectory> = trajs.iter().map(|t| data::apply_norm(t, stats)).collect();
    let targets: Vec<_> = normalized
        .iter()
        .map(|t| data::make_rul_targets(t, config.r_max))
        .collect();
    let (trajs, targets) = if config.augment {
        let mut rng = Rng::seed_from_u64(config.seed);
        rng.set_stream(2);
        data::augment(&normalized, &targets, config.lambda, &mut rng)?
    } else {
        (normalized, targets)
    };
    let mut out = WindowBatch::empty(seq_len, data::NUM_FEATURES);
    for (t, r) in trajs.iter().zip(&targets) {
        out.extend(&data::make_windows(t, r, seq_len, config.stride)?);
    }
    Ok(out)
}

/// Everything that evolves during training and is needed to resume it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub adam: Adam,
    /// Drives minibatch shuffling and dropout masks.
    pub rng: Rng,
    pub epochs_done: usize,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            adam: Adam::new(),
            rng,
            epochs_done: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: Real,
    pub val_rmse: Option<Real>,
    pub val_score: Option<Real>,
    pub seconds: Real,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_rmse,val_score,seconds\n");
        let opt = |v: Option<Real>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.3}",
                r.epoch,
                r.loss,
                opt(r.val_rmse),
                opt(r.val_score),
                r.seconds
            );
        }
        out
    }
}

/// Called after each completed epoch with the record, the network and the
/// state from which training can be resumed.
pub type EpochHook<'a> = dyn FnMut(&EpochRecord, &Network, &TrainState) -> Result<()> + 'a;

/// Minibatch Adam training on `data`, continuing from `state`.
///
/// Each epoch shuffles the windows with the state rng and runs dropout in
/// training mode. Training stops after `config.epochs` epochs in total or
/// once `config.max_steps` optimizer steps have been taken.
pub fn train(
    net: &mut Network,
    data: &WindowBatch,
    validation: Option<&WindowBatch>,
    config: &TrainConfig,
    state: &mut TrainState,
    on_epoch: &mut EpochHook<'_>,
) -> Result<TrainLog> {
    config.validate()?;
    if data.is_empty() {
        return Err(OptimError::Usage("training dataset is empty".into()));
    }
    let adam = config.adam();
    let mut log = TrainLog::default();
    if config.precision == Precision::F32 && state.adam.step == 0 {
        round_to_f32(net, &mut state.adam);
    }
    let out_of_steps = |s: &TrainState| config.max_steps.is_some_and(|m| s.adam.step >= m);
    while state.epochs_done < config.epochs && !out_of_steps(state) {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut state.rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if out_of_steps(state) {
                break;
            }
            let batch = data.subset(chunk);
            let (pred, caches) = net.forward_batch(&batch, Mode::Train, &mut state.rng)?;
            let (loss, grad) = mse_loss(&pred, &batch.label_tensor())?;
            net.backward_batch(&grad, &caches)?;
            adam_step(net, &mut state.adam, &adam)?;
            if config.precision == Precision::F32 {
                round_to_f32(net, &mut state.adam);
            }
            loss_sum += loss * chunk.len() as Real;
            seen += chunk.len();
        }
        state.epochs_done += 1;
        let (val_rmse, val_score) = match validation.filter(|v| !v.is_empty()) {
            Some(v) => {
                let errors: Vec<Real> = net
                    .predict(v)?
                    .iter()
                    .zip(&v.labels)
                    .map(|(e, t)| e.max(0.0) - t)
                    .collect();
                (Some(eval::rmse(&errors)?), Some(eval::score(&errors)?))
            }
            None => (None, None),
        };
        let record = EpochRecord {
            epoch: state.epochs_done,
            loss: loss_sum / seen.max(1) as Real,
            val_rmse,
            val_score,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} loss {:.4} steps {}",
            record.epoch,
            record.loss,
            state.adam.step
        );
        on_epoch(&record, net, state)?;
        log.records.push(record);
    }
    Ok(log)
}

/// Mean squared error of eval-mode estimates on `data`.
pub fn evaluate_mse(net: &Network, data: &WindowBatch) -> Result<Real> {
    let pred = net.predict(data)?;
    let n = pred.len().max(1) as Real;
    Ok(pred
        .iter()
        .zip(&data.labels)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<Real>()
        / n)
}
