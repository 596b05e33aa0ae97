//! Mini-batch Adam training with early stopping on validation loss.
//!
//! Per-epoch gradients inside a batch may be computed on any number of
//! threads; they are always summed in batch order, so a fixed seed gives
//! bit-identical parameters regardless of the thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::ResumeState;
use super::{FeatureMatrix, LstmModel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Epochs (sequences) per mini-batch.
    pub batch_size: usize,
    /// Upper bound on passes over the training split.
    pub max_epochs: usize,
    /// Non-improving validation evaluations tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    /// Train / validation / test fractions, assigned per session.
    pub split: [f64; 3],
    /// Global gradient-norm clip.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            batch_size: 16,
            max_epochs: 40,
            patience: 5,
            seed: 7,
            hidden: 64,
            layers: 2,
            split: [0.6, 0.2, 0.2],
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be finite and > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("train.max_epochs", "must be >= 1"));
        }
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::config("train.hidden", "hidden width and layer count must be >= 1"));
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("train.split", "fractions must lie in [0, 1] and sum to 1"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("train.grad_clip", "must be > 0"));
        }
        Ok(())
    }
}

/// One training sequence with its per-row log-sigma targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: FeatureMatrix,
    pub targets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<LogEntry>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Mean squared error over every row of `samples`.
pub fn dataset_loss(model: &LstmModel, samples: &[Sample]) -> Result<f64> {
    let parts = samples
        .par_iter()
        .map(|s| {
            let out = model.forward(&s.features)?;
            Ok(out.iter().zip(&s.targets).map(|(y, t)| (y - t) * (y - t)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    let rows: usize = samples.iter().map(|s| s.targets.len()).sum();
    Ok(parts.iter().sum::<f64>() / rows.max(1) as f64)
}

/// Trains a fresh model. Returns the best-validation snapshot, the report and
/// the state needed to resume.
pub fn train(train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<(LstmModel, TrainReport, ResumeState)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let width = train[0].features.width();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = LstmModel::init(width, cfg.hidden, cfg.layers, &mut rng);
    let rows: usize = train.iter().map(|s| s.targets.len()).sum();
    let mean_target = train.iter().flat_map(|s| s.targets.iter()).sum::<f64>() / rows.max(1) as f64;
    model.set_head_bias(mean_target);
    let state = ResumeState::fresh(model);
    train_from(state, train, val, cfg)
}

/// Continues training from a saved state until early stopping or `cfg.max_epochs`
/// total passes.
pub fn train_from(
    mut state: ResumeState,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<(LstmModel, TrainReport, ResumeState)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let n_params = state.model.params().len();
    let mut order: Vec<usize> = (0..train.len()).collect();

    while state.epochs_done < cfg.max_epochs && !state.stopped {
        let mut rng = epoch_rng(cfg.seed, state.epochs_done);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut epoch_sse = 0.0;
        let mut epoch_rows = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let rows: usize = batch.iter().map(|i| train[*i].targets.len()).sum();
            let scale = 1.0 / rows as f64;
            let model = &state.model;
            let parts = batch
                .par_iter()
                .map(|i| {
                    let mut g = vec![0.0; n_params];
                    let (sse, _) = model.accumulate_gradient(&train[*i].features, &train[*i].targets, None, scale, &mut g)?;
                    Ok((sse, g))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; n_params];
            for (sse, g) in &parts {
                epoch_sse += sse;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            epoch_rows += rows;

            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.grad_clip {
                let k = cfg.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= k);
            }
            state.adam_step += 1;
            let t = state.adam_step as i32;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            let params = state.model.params_mut();
            for k in 0..n_params {
                let g = grad[k];
                state.adam_m[k] = BETA1 * state.adam_m[k] + (1.0 - BETA1) * g;
                state.adam_v[k] = BETA2 * state.adam_v[k] + (1.0 - BETA2) * g * g;
                let m_hat = state.adam_m[k] / c1;
                let v_hat = state.adam_v[k] / c2;
                params[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }

        let train_loss = epoch_sse / epoch_rows.max(1) as f64;
        let val_loss = dataset_loss(&state.model, val)?;
        state.epochs_done += 1;
        state.history.push(LogEntry {
            epoch: state.epochs_done,
            train_loss,
            val_loss,
        });
        log::info!("epoch {:>3}  train {:.5}  val {:.5}", state.epochs_done, train_loss, val_loss);
        if val_loss < state.best_val_loss {
            state.best_val_loss = val_loss;
            state.best_epoch = state.epochs_done;
            state.best_params = state.model.params().to_vec();
            state.since_best = 0;
        } else {
            state.since_best += 1;
            if state.since_best > cfg.patience {
                state.stopped = true;
            }
        }
    }

    let best = LstmModel::from_parts(
        state.model.input_width(),
        state.model.hidden(),
        state.model.layers(),
        state.best_params.clone(),
    )?;
    let report = TrainReport {
        history: state.history.clone(),
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        stopped_early: state.stopped,
    };
    Ok((best, report, state))
}
