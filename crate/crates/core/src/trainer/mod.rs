//! Initialization, Adam, the loss-weight schedule, the training loop and
//! checkpoints.

mod checkpoint;
mod init;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use init::{init_params, xavier_bound, xavier_init};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ParamSet;
use crate::model::{check_loss_weights, AffordanceModel, ModelConfig, SequenceBatch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// First epoch (0-based) trained with `lambda_late`.
    pub schedule_switch_epoch: usize,
    pub lambda_early: (f64, f64),
    pub lambda_late: (f64, f64),
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Published schedule: 200 epochs, switch at 150, lr 2e-5, batch 2.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 200,
            schedule_switch_epoch: 150,
            lambda_early: (0.2, 0.8),
            lambda_late: (0.5, 0.5),
            learning_rate: 2e-5,
            batch_size: 2,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    /// Same curriculum with `epochs` total; the switch stays at 75% of training.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self.schedule_switch_epoch = switch_epoch_for(epochs);
        self
    }

    /// Desk-scale defaults used by the CLI and tests.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 1,
            ..TrainConfig::paper().with_epochs(150)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.schedule_switch_epoch >= self.epochs {
            return Err(Error::Config(format!(
                "schedule_switch_epoch {} must be below epochs {}",
                self.schedule_switch_epoch, self.epochs
            )));
        }
        check_loss_weights(self.lambda_early.0, self.lambda_early.1)?;
        check_loss_weights(self.lambda_late.0, self.lambda_late.1)?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

/// Switch epoch preserving the 150/200 ratio.
pub fn switch_epoch_for(epochs: usize) -> usize {
    epochs * 3 / 4
}

/// `(λ_seg, λ_action)` for a 0-based epoch.
pub fn lambda_schedule(epoch: usize, config: &TrainConfig) -> Result<(f64, f64)> {
    if epoch >= config.epochs {
        return Err(Error::Config(format!("epoch {epoch} outside 0..{}", config.epochs)));
    }
    Ok(if epoch < config.schedule_switch_epoch {
        config.lambda_early
    } else {
        config.lambda_late
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of one buffer at step `t ≥ 1`.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, t: u64, hp: AdamParams) {
    assert!(t >= 1, "Adam step counter starts at 1");
    assert!(param.len() == grad.len() && grad.len() == m.len() && m.len() == v.len());
    let c1 = 1.0 - hp.beta1.powf(t as f64);
    let c2 = 1.0 - hp.beta2.powf(t as f64);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// Moment buffers aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    /// Number of steps taken so far.
    pub t: u64,
    pub hp: AdamParams,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            hp: AdamParams::default(),
        }
    }
}

pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::shape("adam_step", "parameter, gradient and moment layouts differ"));
    }
    state.t += 1;
    let t = state.t;
    let hp = state.hp;
    let (ms, vs) = (state.m.tensors_mut(), state.v.tensors_mut());
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        adam_update(
            p.data_mut(),
            grads.tensors()[i].data(),
            ms[i].data_mut(),
            vs[i].data_mut(),
            lr,
            t,
            hp,
        );
    }
    Ok(())
}

/// Per-epoch mean losses over all training sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub l_total: f64,
    pub l_seg: f64,
    pub l_action: f64,
}

/// Loss history as CSV.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lambda1,lambda2,l_total,l_seg,l_action\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.lambda1, r.lambda2, r.l_total, r.l_seg, r.l_action
        );
    }
    out
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: AffordanceModel,
    pub train_config: TrainConfig,
    pub adam: AdamState,
    /// Next epoch to run (0-based).
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    /// Fresh model and optimizer; the model and the shuffling stream are
    /// both derived from `train_config.seed`.
    pub fn new(model_config: &ModelConfig, train_config: &TrainConfig) -> Result<Self> {
        model_config.validate()?;
        train_config.validate()?;
        let model = AffordanceModel::new(model_config, train_config.seed)?;
        let adam = AdamState::new(model.params());
        let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
        rng.set_stream(1);
        Ok(TrainState {
            model,
            train_config: train_config.clone(),
            adam,
            epoch: 0,
            rng,
            history: Vec::new(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.train_config.epochs
    }

    /// One pass over `dataset` in a freshly shuffled order, one Adam step per
    /// batch on the mean gradient of its sequences.
    pub fn run_epoch(&mut self, dataset: &[SequenceBatch]) -> Result<EpochRecord> {
        if dataset.is_empty() {
            return Err(Error::Empty("training set is empty"));
        }
        let epoch = self.epoch;
        let (l1, l2) = lambda_schedule(epoch, &self.train_config)?;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.rng);

        let (mut total, mut seg, mut action) = (0.0, 0.0, 0.0);
        for (batch_id, chunk) in order.chunks(self.train_config.batch_size).enumerate() {
            let mut sum: Option<ParamSet> = None;
            for &i in chunk {
                let diverged = |e: Error| match e {
                    Error::NonFinite { .. } => Error::Divergence { epoch, batch: batch_id },
                    other => other,
                };
                let (loss, grads) = self.model.loss_and_grads(&dataset[i], l1, l2).map_err(diverged)?;
                if !loss.total.is_finite() {
                    return Err(Error::Divergence { epoch, batch: batch_id });
                }
                total += loss.total;
                seg += loss.seg;
                action += loss.action;
                sum = Some(match sum {
                    None => grads,
                    Some(mut acc) => {
                        for (a, g) in acc.tensors_mut().iter_mut().zip(grads.tensors()) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                        }
                        acc
                    }
                });
            }
            let mut grads = sum.expect("non-empty chunk");
            let scale = 1.0 / chunk.len() as f64;
            for t in grads.tensors_mut() {
                t.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            let lr = self.train_config.learning_rate;
            adam_step(self.model.params_mut(), &grads, &mut self.adam, lr)?;
            if !self.model.params().tensors().iter().all(|t| t.all_finite()) {
                return Err(Error::Divergence { epoch, batch: batch_id });
            }
        }
        let n = dataset.len() as f64;
        let record = EpochRecord {
            epoch,
            lambda1: l1,
            lambda2: l2,
            l_total: total / n,
            l_seg: seg / n,
            l_action: action / n,
        };
        self.history.push(record);
        self.epoch += 1;
        Ok(record)
    }

    /// Trains until `epochs` is reached, calling `after_epoch` after each one.
    pub fn run<F>(&mut self, dataset: &[SequenceBatch], mut after_epoch: F) -> Result<()>
    where
        F: FnMut(&TrainState) -> Result<()>,
    {
        while !self.is_finished() {
            self.run_epoch(dataset)?;
            after_epoch(self)?;
        }
        Ok(())
    }
}

/// Full training run; returns the final state (model + history).
pub fn train(model_config: &ModelConfig, train_config: &TrainConfig, dataset: &[SequenceBatch]) -> Result<TrainState> {
    for b in dataset {
        b.validate(model_config)?;
    }
    let mut state = TrainState::new(model_config, train_config)?;
    state.run(dataset, |_| Ok(()))?;
    Ok(state)
}

#[cfg(test)]
mod tests;
