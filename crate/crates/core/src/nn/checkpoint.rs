//! Versioned JSON model checkpoints.
//!
//! Floats are written with shortest round-trip formatting, so a reloaded
//! model reproduces forward outputs bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureSet, LstmModel, LogEntry, Normalizer, TrainConfig, TrainReport};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "satweight-lstm";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer and early-stopping state for continuing a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    /// Current (not best) parameters.
    pub model: LstmModel,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_step: u64,
    pub epochs_done: usize,
    pub best_params: Vec<f64>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub since_best: usize,
    pub stopped: bool,
    pub history: Vec<LogEntry>,
}

impl ResumeState {
    pub fn fresh(model: LstmModel) -> Self {
        let n = model.params().len();
        Self {
            best_params: model.params().to_vec(),
            model,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            adam_step: 0,
            epochs_done: 0,
            best_val_loss: f64::MAX,
            best_epoch: 0,
            since_best: 0,
            stopped: false,
            history: Vec::new(),
        }
    }

    /// Clears the early-stop flag so training can continue past a previous stop.
    pub fn reopen(&mut self) {
        self.stopped = false;
        self.since_best = 0;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub feature_set: FeatureSet,
    pub normalizer: Normalizer,
    pub train_config: TrainConfig,
    pub model: LstmModel,
    pub report: TrainReport,
    pub resume: Option<ResumeState>,
}

impl Checkpoint {
    pub fn new(
        feature_set: FeatureSet,
        normalizer: Normalizer,
        train_config: TrainConfig,
        model: LstmModel,
        report: TrainReport,
        resume: Option<ResumeState>,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: train_config.seed,
            feature_set,
            normalizer,
            train_config,
            model,
            report,
            resume,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("not a model checkpoint (format `{}`)", ck.format),
            });
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        ck.validate()?;
        Ok(ck)
    }

    fn validate(&self) -> Result<()> {
        let m = &self.model;
        LstmModel::from_parts(m.input_width(), m.hidden(), m.layers(), m.params().to_vec())?;
        if self.normalizer.width() != m.input_width() || self.normalizer.std.len() != m.input_width() {
            return Err(Error::ShapeMismatch("normalizer width does not match the model".into()));
        }
        if self.feature_set.width() != m.input_width() {
            return Err(Error::ShapeMismatch("feature set width does not match the model".into()));
        }
        if let Some(r) = &self.resume {
            let n = m.params().len();
            if r.adam_m.len() != n || r.adam_v.len() != n || r.best_params.len() != n || r.model.params().len() != n {
                return Err(Error::ShapeMismatch("resume state does not match the model".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{FeatureMatrix, FULL_WIDTH};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = LstmModel::init(FULL_WIDTH, 5, 2, &mut rng);
        let normalizer = Normalizer {
            mean: (0..FULL_WIDTH).map(|k| k as f64 * 0.1).collect(),
            std: vec![1.0 / 3.0; FULL_WIDTH],
        };
        let report = TrainReport {
            history: vec![],
            best_epoch: 0,
            best_val_loss: 0.1 + 0.2,
            stopped_early: false,
        };
        let resume = ResumeState::fresh(model.clone());
        Checkpoint::new(FeatureSet::Full, normalizer, TrainConfig::default(), model, report, Some(resume))
    }

    #[test]
    fn reload_is_bit_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let fm = FeatureMatrix::new(2, FULL_WIDTH, (0..2 * FULL_WIDTH).map(|k| (k as f64).sin()).collect()).unwrap();
        let a = ck.model.forward(&fm).unwrap();
        let b = back.model.forward(&fm).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn version_and_shape_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut ck = sample();
        ck.version = 2;
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::VersionMismatch { found: 2, .. })));
        let mut ck = sample();
        ck.feature_set = FeatureSet::ResidualOnly;
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::ShapeMismatch(_))));
    }
}
