//! Recurrent weight predictor.
//!
//! Each epoch becomes a sequence with one row per measurement: a fixed-width
//! summary of that measurement's leave-one-out residual row, optionally
//! followed by its per-link signal features. The network outputs one log
//! error scale (log meters) per row, mapped to a weight by `ω = exp(−2q)`.

mod checkpoint;
mod lstm;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, ResumeState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use lstm::LstmModel;
pub use train::{train, train_from, LogEntry, Sample, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::features::{PerLinkFeatures, PER_LINK_WIDTH};
use crate::model::{Epoch, NavState, SPEED_OF_LIGHT};
use crate::residuals::SUMMARY_WIDTH;
use crate::solver::WeightVector;

/// Label floor on the absolute true-position error (m).
pub const LABEL_EPSILON: f64 = 0.01;
pub const MIN_WEIGHT: f64 = 1e-8;
pub const MAX_WEIGHT: f64 = 1e4;

pub const FULL_WIDTH: usize = SUMMARY_WIDTH + PER_LINK_WIDTH;

/// Row-major sequence input, one row per measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}×{width} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite feature".into()));
        }
        Ok(Self { rows, width, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Which columns the network sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// Residual summary plus per-link features.
    Full,
    /// Residual summary only.
    ResidualOnly,
}

impl FeatureSet {
    pub fn width(self) -> usize {
        match self {
            FeatureSet::Full => FULL_WIDTH,
            FeatureSet::ResidualOnly => SUMMARY_WIDTH,
        }
    }
}

/// Unnormalized feature row: residual summary then per-link values, with
/// heavy-tailed quantities compressed (`asinh` on meters, `ln(1+x)` on lock
/// time and C/N0 variance).
pub fn raw_row(summary: &[f64; SUMMARY_WIDTH], link: &PerLinkFeatures) -> [f64; FULL_WIDTH] {
    let mut row = [0.0; FULL_WIDTH];
    for (k, v) in summary.iter().enumerate() {
        row[k] = if k < 6 { v.asinh() } else { *v };
    }
    let l = link.to_array();
    row[SUMMARY_WIDTH] = l[0];
    row[SUMMARY_WIDTH + 1] = l[1].ln_1p();
    row[SUMMARY_WIDTH + 2] = l[2];
    row[SUMMARY_WIDTH + 3] = l[3];
    row[SUMMARY_WIDTH + 4] = l[4].ln_1p();
    row[SUMMARY_WIDTH + 5] = l[5];
    row
}

/// Per-column z-score statistics frozen from training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        for r in rows {
            for k in 0..width {
                sum[k] += r[k];
                sq[k] += r[k] * r[k];
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptySplit("train"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes the first `width()` columns of each raw row.
    pub fn apply(&self, raw: &[[f64; FULL_WIDTH]]) -> Result<FeatureMatrix> {
        let w = self.width();
        let mut data = Vec::with_capacity(raw.len() * w);
        for r in raw {
            for k in 0..w {
                data.push((r[k] - self.mean[k]) / self.std[k]);
            }
        }
        FeatureMatrix::new(raw.len(), w, data)
    }
}

/// Clock biases from an equal-weight clock-only fit at the fixed true position.
pub fn truth_clock_state(epoch: &Epoch) -> Result<NavState> {
    let truth = epoch.truth.ok_or(Error::MissingTruth)?;
    let mut state = NavState::new(truth);
    for c in epoch.constellations() {
        let offsets: Vec<f64> = epoch
            .measurements
            .iter()
            .filter(|m| m.constellation == c)
            .map(|m| m.pseudorange - truth.distance(m.sat_pos))
            .collect();
        let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
        state.clock_bias.insert(c, mean / SPEED_OF_LIGHT);
    }
    Ok(state)
}

/// Signed errors `ρ − h(X_true)` per measurement.
pub fn truth_errors(epoch: &Epoch) -> Result<Vec<f64>> {
    let state = truth_clock_state(epoch)?;
    epoch
        .measurements
        .iter()
        .map(|m| crate::model::residual(&state, m))
        .collect()
}

/// Log error-scale targets `ln(max(|ρ − h(X_true)|, ε))`.
pub fn make_labels(epoch: &Epoch) -> Result<Vec<f64>> {
    Ok(truth_errors(epoch)?
        .into_iter()
        .map(|e| e.abs().max(LABEL_EPSILON).ln())
        .collect())
}

/// Weight implied by a log error scale, clamped to `[MIN_WEIGHT, MAX_WEIGHT]`.
pub fn quality_to_weight(quality: f64) -> f64 {
    (-2.0 * quality).exp().clamp(MIN_WEIGHT, MAX_WEIGHT)
}

pub fn weights_from_quality(quality: &[f64]) -> WeightVector {
    WeightVector::new(quality.iter().map(|q| quality_to_weight(*q)).collect()).expect("clamped weights are valid")
}

pub fn predict_weights(model: &LstmModel, fm: &FeatureMatrix) -> Result<WeightVector> {
    Ok(weights_from_quality(&model.forward(fm)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_mapping() {
        assert!((quality_to_weight(2f64.ln()) - 0.25).abs() < 1e-15);
        assert_eq!(quality_to_weight(20.0), MIN_WEIGHT);
        assert!((quality_to_weight(LABEL_EPSILON.ln()) - 1e4).abs() < 1e-8);
        assert_eq!(quality_to_weight(-50.0), MAX_WEIGHT);
    }

    #[test]
    fn weight_strictly_decreasing_inside_clamp() {
        let qs: Vec<f64> = (0..200).map(|k| -4.5 + k as f64 * 0.06).collect();
        for w in qs.windows(2) {
            assert!(quality_to_weight(w[1]) < quality_to_weight(w[0]));
        }
    }

    #[test]
    fn normalizer_zscores_training_rows() {
        let raw = vec![[1.0; FULL_WIDTH], [3.0; FULL_WIDTH]];
        let norm = Normalizer::fit(raw.iter().map(|r| &r[..]), FULL_WIDTH).unwrap();
        let fm = norm.apply(&raw).unwrap();
        assert_eq!(fm.row(0)[0], -1.0);
        assert_eq!(fm.row(1)[5], 1.0);
        let narrow = Normalizer::fit(raw.iter().map(|r| &r[..]), SUMMARY_WIDTH).unwrap();
        assert_eq!(narrow.apply(&raw).unwrap().width(), SUMMARY_WIDTH);
    }
}
