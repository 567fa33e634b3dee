//! AdamW on L1 with left–right flip augmentation, validation-driven early
//! stopping and bit-exact checkpoints.
//!
//! Epoch `e` draws its shuffle and flips from the stream `(seed, e)`, so a run
//! resumed from a checkpoint after epoch `k` replays epoch `k + 1` exactly.

mod checkpoint;

pub use checkpoint::{
    checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::SlicePair;
use crate::error::{Error, Result};
use crate::model::parse_usize;
use crate::model::{Generator, ModelConfig, ParamTable};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub flip_prob: f64,
    pub seed: u64,
}

/// Keys accepted by [`TrainConfig::set`].
pub const TRAIN_KEYS: [&str; 10] = [
    "lr",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "batch_size",
    "max_epochs",
    "patience",
    "flip_prob",
    "seed",
];

/// Validation losses must drop by more than this to count as improvement.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-6;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 1e-2,
            batch_size: 32,
            max_epochs: 251,
            patience: 20,
            flip_prob: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short CPU runs on phantom data: larger steps, smaller batches.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 4,
            max_epochs: 40,
            patience: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr {} must be positive", self.lr));
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{k} {b} must lie in (0, 1)"));
            }
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob {} must lie in [0, 1]", self.flip_prob));
        }
        Ok(())
    }

    /// `key = value` form; floats print in shortest round-trip notation.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let v = [
            format!("{:?}", self.lr),
            format!("{:?}", self.beta1),
            format!("{:?}", self.beta2),
            format!("{:?}", self.eps),
            format!("{:?}", self.weight_decay),
            self.batch_size.to_string(),
            self.max_epochs.to_string(),
            self.patience.to_string(),
            format!("{:?}", self.flip_prob),
            self.seed.to_string(),
        ];
        TRAIN_KEYS.into_iter().zip(v).collect()
    }

    /// Returns `Ok(false)` for keys that are not training keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let float = |v: &str| -> Result<f64> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: {v:?} is not a number")))
        };
        match key {
            "lr" => self.lr = float(value)?,
            "beta1" => self.beta1 = float(value)?,
            "beta2" => self.beta2 = float(value)?,
            "eps" => self.eps = float(value)?,
            "weight_decay" => self.weight_decay = float(value)?,
            "batch_size" => self.batch_size = parse_usize(key, value)?,
            "max_epochs" => self.max_epochs = parse_usize(key, value)?,
            "patience" => self.patience = parse_usize(key, value)?,
            "flip_prob" => self.flip_prob = float(value)?,
            "seed" => {
                self.seed = value.trim().parse().map_err(|_| {
                    Error::Config(format!("seed: {value:?} is not an unsigned integer"))
                })?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Mean absolute difference, as one fused tape op with gradient `sign(p − t)/n`.
pub fn l1_loss<'t, T: Scalar>(pred: Var<'t, T>, target: &Tensor<T>) -> Result<Var<'t, T>> {
    let p = pred.value();
    if p.shape() != target.shape() {
        return Err(Error::dim(format!(
            "l1 loss of {:?} against {:?}",
            p.shape(),
            target.shape()
        )));
    }
    let n = T::of(p.numel() as f64);
    let loss = p
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b).abs())
        .sum::<T>()
        / n;
    let diff_sign: Tensor<T> = p
        .zip_map(target, |a, b| {
            if a > b {
                T::one()
            } else if a < b {
                -T::one()
            } else {
                T::zero()
            }
        })
        .expect("shapes checked");
    let tape = pred.tape();
    Ok(tape.push(Tensor::scalar(loss), &[pred], move |g| {
        let s = g.item() / n;
        vec![Some(diff_sign.map(|v| v * s))]
    }))
}

/// Per-parameter AdamW moments, indexed like [`ParamTable::unique`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamTable<f32>) -> Self {
        let zeros = || {
            params
                .unique()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn check(&self, params: &ParamTable<f32>) -> Result<()> {
        let n = params.num_unique();
        if self.m.len() != n || self.v.len() != n {
            return Err(Error::Contract(format!(
                "optimizer holds {} moment buffers for {n} parameters",
                self.m.len()
            )));
        }
        for ((_, name, p), (m, v)) in params.unique().zip(self.m.iter().zip(&self.v)) {
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(Error::Contract(format!(
                    "optimizer buffers for {name} do not match its shape"
                )));
            }
        }
        Ok(())
    }
}

/// One AdamW update with weight decay applied to the weights directly.
pub fn adamw_step(
    params: &mut ParamTable<f32>,
    grads: &[Option<Tensor<f32>>],
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    state.check(params)?;
    let ids: Vec<_> = params
        .unique()
        .map(|(id, name, _)| (id, name.to_string()))
        .collect();
    if grads.len() != ids.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            ids.len()
        )));
    }
    if let Some((_, name)) = ids
        .iter()
        .zip(grads)
        .find(|(_, g)| g.is_none())
        .map(|(x, _)| x)
    {
        return Err(Error::Contract(format!("no gradient for parameter {name}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = (1.0 - cfg.beta1.powi(t)) as f32;
    let c2 = (1.0 - cfg.beta2.powi(t)) as f32;
    let lr = cfg.lr as f32;
    let decay = (cfg.lr * cfg.weight_decay) as f32;
    let eps = cfg.eps as f32;
    for (i, ((id, name), g)) in ids.iter().zip(grads).enumerate() {
        let g = g.as_ref().expect("checked above");
        if g.shape() != params.tensor(*id).shape() {
            return Err(Error::dim(format!(
                "gradient for {name} has shape {:?}",
                g.shape()
            )));
        }
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let theta = params.tensor_mut(*id).data_mut();
        for j in 0..theta.len() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            let th = theta[j];
            theta[j] = th - lr * (mh / (vh.sqrt() + eps)) - decay * th;
        }
    }
    Ok(())
}

/// Mirrors every channel of a `C×H×W` tensor left–right (reverses columns).
pub fn flip_columns(t: &Tensor<f32>) -> Tensor<f32> {
    let w = *t.shape().last().expect("rank ≥ 1");
    let mut out = t.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    out
}

/// With probability `flip_prob`, mirrors input and target together.
pub fn augment_flip(sample: &SlicePair, flip_prob: f64, rng: &mut impl Rng) -> SlicePair {
    if rng.gen::<f64>() < flip_prob {
        SlicePair {
            input: flip_columns(&sample.input),
            target: flip_columns(&sample.target),
            ..sample.clone()
        }
    } else {
        sample.clone()
    }
}

/// The shuffle/augmentation stream of epoch `epoch` (0-based).
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream 0 is left to model initialization.
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// One pass over `data` in seeded order; returns the sample-weighted mean batch loss.
pub fn train_epoch(
    model: &mut Generator<f32>,
    data: &[SlicePair],
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let samples: Vec<SlicePair> = chunk
            .iter()
            .map(|&i| augment_flip(&data[i], cfg.flip_prob, rng))
            .collect();
        let (x, y) = SlicePair::batch(&samples)?;
        let fault = |why: String| {
            let ids: Vec<String> = samples
                .iter()
                .map(|s| format!("{}:{}", s.patient_id, s.slice_index))
                .collect();
            Error::Numeric(format!("batch {b} ({}): {why}", ids.join(" ")))
        };
        let tape = Tape::new();
        let p = model.params().bind(&tape, true);
        let pred = model.forward(&p, tape.constant(x)).map_err(|e| match e {
            Error::Numeric(m) => fault(m),
            other => other,
        })?;
        let loss = l1_loss(pred, &y)?;
        let value = loss.value().item() as f64;
        if !value.is_finite() {
            return Err(fault(format!("loss is {value}")));
        }
        tape.backward(loss)?;
        let grads = p.grads();
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(fault("non-finite gradient".into()));
        }
        drop(p);
        adamw_step(model.params_mut(), &grads, opt, cfg)?;
        total += value * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Mean per-pixel L1 over `data`, without augmentation or updates.
pub fn evaluate_loss(model: &Generator<f32>, data: &[SlicePair], batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation set is empty".into()));
    }
    let mut total = 0.0;
    for chunk in data.chunks(batch_size.max(1)) {
        let (x, y) = SlicePair::batch(chunk)?;
        let pred = model.predict(&x)?;
        let s: f64 = pred
            .data()
            .iter()
            .zip(y.data())
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum();
        total += s / y.numel() as f64 * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStop {
    pub decision: StopDecision,
    /// 0-based index of the best loss (first one, among ties within tolerance).
    pub best_epoch: usize,
}

/// Stops once `patience` epochs in a row fail to improve on the best loss by
/// more than [`IMPROVEMENT_TOLERANCE`].
pub fn early_stop_check(history: &[f64], patience: usize) -> Result<EarlyStop> {
    let Some(&first) = history.first() else {
        return Err(Error::Contract(
            "early stopping needs at least one validation loss".into(),
        ));
    };
    let (mut best, mut best_epoch) = (first, 0);
    for (i, &l) in history.iter().enumerate().skip(1) {
        if l < best - IMPROVEMENT_TOLERANCE {
            best = l;
            best_epoch = i;
        }
    }
    let stale = history.len() - 1 - best_epoch;
    let decision = if stale >= patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    };
    Ok(EarlyStop {
        decision,
        best_epoch,
    })
}

/// Everything a resumed run needs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Generator<f32>,
    pub opt: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
    pub train_history: Vec<f64>,
    pub val_history: Vec<f64>,
}

impl TrainState {
    pub fn new(model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        model_cfg.validate()?;
        cfg.validate()?;
        let model = Generator::new(model_cfg, cfg.seed)?;
        let opt = OptimizerState::new(model.params());
        Ok(Self {
            model,
            opt,
            epoch: 0,
            train_history: Vec::new(),
            val_history: Vec::new(),
        })
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        let e = early_stop_check(&self.val_history, usize::MAX).ok()?;
        Some((e.best_epoch, self.val_history[e.best_epoch]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    /// 0-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// This epoch is the new best.
    pub improved: bool,
    pub seconds: f64,
}

/// Trains until `max_epochs`, early stop, or `on_epoch` returns `Ok(false)`.
pub fn fit(
    state: &mut TrainState,
    train: &[SlicePair],
    val: &[SlicePair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainState, &EpochReport) -> Result<bool>,
) -> Result<EarlyStop> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::Contract("validation set is empty".into()));
    }
    while state.epoch < cfg.max_epochs {
        if let Ok(s) = early_stop_check(&state.val_history, cfg.patience) {
            if s.decision == StopDecision::Stop {
                return Ok(s);
            }
        }
        let start = Instant::now();
        let mut rng = epoch_rng(cfg.seed, state.epoch);
        let train_loss = train_epoch(&mut state.model, train, &mut state.opt, cfg, &mut rng)?;
        let val_loss = evaluate_loss(&state.model, val, cfg.batch_size)?;
        state.train_history.push(train_loss);
        state.val_history.push(val_loss);
        let report = EpochReport {
            epoch: state.epoch,
            train_loss,
            val_loss,
            improved: state.best().map(|(e, _)| e) == Some(state.epoch),
            seconds: start.elapsed().as_secs_f64(),
        };
        state.epoch += 1;
        if !on_epoch(state, &report)? {
            break;
        }
    }
    early_stop_check(&state.val_history, cfg.patience)
}
