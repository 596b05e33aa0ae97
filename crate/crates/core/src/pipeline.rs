//! Epoch preparation shared by training and evaluation: elevation masking,
//! the all-in-view anchor solve, per-link features, residual matrix, raw
//! feature rows and labels.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{calibrate_sota, CalibrationSample, SotaWeightParams, ELEVATION_MASK_DEG};
use crate::error::{Error, Result};
use crate::features::TrackingHistory;
use crate::geo::{ecef_to_geodetic, elevation_azimuth, EcefPosition};
use crate::io::{Dataset, DatasetHeader, EpochRecord, Split};
use crate::model::{Epoch, NavState};
use crate::nn::{
    make_labels, raw_row, train, train_from, truth_errors, Checkpoint, FeatureSet, Normalizer, Sample, TrainConfig, FULL_WIDTH,
};
use crate::residuals::build_residual_matrix_from;
use crate::solver::{solve_equal, SolverConfig};

pub const FEATURES_FORMAT: &str = "satweight-features";
pub const FEATURES_VERSION: u32 = 1;

/// One epoch ready for any weighting strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedEpoch {
    pub session_id: u32,
    /// Measurements above the elevation mask.
    pub epoch: Epoch,
    /// All-in-view equal-weight solution of the masked epoch.
    pub anchor: NavState,
    /// Radians, seen from the anchor.
    pub elevations: Vec<f64>,
    /// m/s², from the second difference of truth positions (0 without truth).
    pub accel: f64,
    pub raw: Vec<[f64; FULL_WIDTH]>,
    pub labels: Option<Vec<f64>>,
    pub truth_errors: Option<Vec<f64>>,
}

/// Epoch that could not be prepared; every strategy reports it as censored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedEpoch {
    pub session_id: u32,
    pub time: f64,
    pub n_sv: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prepared {
    Ready(Box<PreparedEpoch>),
    Failed(FailedEpoch),
}

impl Prepared {
    pub fn session_id(&self) -> u32 {
        match self {
            Prepared::Ready(p) => p.session_id,
            Prepared::Failed(f) => f.session_id,
        }
    }

    pub fn time(&self) -> f64 {
        match self {
            Prepared::Ready(p) => p.epoch.time,
            Prepared::Failed(f) => f.time,
        }
    }

    pub fn ready(&self) -> Option<&PreparedEpoch> {
        match self {
            Prepared::Ready(p) => Some(p),
            Prepared::Failed(_) => None,
        }
    }
}

/// Prepared epochs of a whole dataset plus its header.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDataset {
    pub header: DatasetHeader,
    pub epochs: Vec<Prepared>,
}

impl PreparedDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Prepared> {
        let ids = self.header.sessions.iter().filter(move |s| s.split == split).map(|s| s.id).collect::<Vec<_>>();
        self.epochs.iter().filter(move |p| ids.contains(&p.session_id()))
    }

    pub fn ready_in(&self, split: Split) -> Vec<&PreparedEpoch> {
        self.split(split).filter_map(Prepared::ready).collect()
    }
}

/// `|p₊ − 2p + p₋|`-style acceleration for uneven spacing; ends copy their neighbor.
pub fn truth_accelerations(times: &[f64], truth: &[Option<EcefPosition>]) -> Vec<f64> {
    let n = times.len();
    let mut out = vec![0.0; n];
    for k in 1..n.saturating_sub(1) {
        let (Some(a), Some(b), Some(c)) = (truth[k - 1], truth[k], truth[k + 1]) else {
            continue;
        };
        let (h0, h1) = (times[k] - times[k - 1], times[k + 1] - times[k]);
        if !(h0 > 0.0 && h1 > 0.0) {
            continue;
        }
        let (a, b, c) = (a.to_vector(), b.to_vector(), c.to_vector());
        if (h0 - h1).abs() <= 1e-9 * h0 {
            out[k] = ((c - 2.0 * b + a) / (h0 * h1)).norm();
        } else {
            out[k] = (2.0 * ((c - b) / h1 - (b - a) / h0) / (h0 + h1)).norm();
        }
    }
    if n >= 3 {
        out[0] = out[1];
        out[n - 1] = out[n - 2];
    }
    out
}

fn prepare_one(
    session_id: u32,
    epoch: &Epoch,
    accel: f64,
    history: &mut TrackingHistory,
    solver: &SolverConfig,
) -> Result<PreparedEpoch> {
    let first = solve_equal(epoch, None, solver)?;
    let geo = ecef_to_geodetic(first.state.position)?;
    let mask = ELEVATION_MASK_DEG.to_radians();
    let all_el = epoch
        .measurements
        .iter()
        .map(|m| elevation_azimuth(m.sat_pos, geo).map(|(el, _)| el))
        .collect::<Result<Vec<_>>>()?;
    let (masked, anchor, geo) = if all_el.iter().all(|e| *e > mask) {
        (epoch.clone(), first.state, geo)
    } else {
        let masked = epoch.subset(|i| all_el[i] > mask);
        if masked.is_empty() {
            return Err(Error::NotEnoughMeasurements { have: 0, need: 1 });
        }
        let rep = solve_equal(&masked, Some(&first.state), solver)?;
        let geo = ecef_to_geodetic(rep.state.position)?;
        (masked, rep.state, geo)
    };
    let links = history.update_and_extract(&masked, geo)?;
    let matrix = build_residual_matrix_from(&masked, Some(&anchor), solver)?;
    let raw = (0..masked.len()).map(|n| raw_row(&matrix.row_summary(n), &links[n])).collect();
    let elevations = links.iter().map(|l| l.elevation).collect();
    let (labels, errors) = if masked.truth.is_some() {
        (Some(make_labels(&masked)?), Some(truth_errors(&masked)?))
    } else {
        (None, None)
    };
    Ok(PreparedEpoch {
        session_id,
        epoch: masked,
        anchor,
        elevations,
        accel,
        raw,
        labels,
        truth_errors: errors,
    })
}

/// Prepares one session's epochs in time order.
pub fn prepare_session(session_id: u32, records: &[&EpochRecord], solver: &SolverConfig) -> Vec<Prepared> {
    let times: Vec<f64> = records.iter().map(|r| r.epoch.time).collect();
    let truth: Vec<Option<EcefPosition>> = records.iter().map(|r| r.epoch.truth).collect();
    let accel = truth_accelerations(&times, &truth);
    let mut history = TrackingHistory::new();
    records
        .iter()
        .zip(accel)
        .map(|(r, a)| match prepare_one(session_id, &r.epoch, a, &mut history, solver) {
            Ok(p) => Prepared::Ready(Box::new(p)),
            Err(e) => Prepared::Failed(FailedEpoch {
                session_id,
                time: r.epoch.time,
                n_sv: r.epoch.len(),
                reason: e.to_string(),
            }),
        })
        .collect()
}

/// Prepares every session in parallel; output follows header session order.
pub fn prepare_dataset(dataset: &Dataset, solver: &SolverConfig) -> PreparedDataset {
    let sessions = dataset.by_session();
    let parts: Vec<Vec<Prepared>> = sessions
        .par_iter()
        .map(|(info, records)| prepare_session(info.id, records, solver))
        .collect();
    PreparedDataset {
        header: dataset.header.clone(),
        epochs: parts.into_iter().flatten().collect(),
    }
}

pub fn write_features(prepared: &PreparedDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut header = prepared.header.clone();
    header.format = FEATURES_FORMAT.to_string();
    header.version = FEATURES_VERSION;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for p in &prepared.epochs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<PreparedDataset> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let parse = |line: usize, e: serde_json::Error| Error::Parse {
        line,
        column: e.column().max(1),
        message: e.to_string(),
    };
    let first = lines.next().ok_or(Error::Parse {
        line: 1,
        column: 1,
        message: "missing header line".into(),
    })??;
    let mut header: DatasetHeader = serde_json::from_str(&first).map_err(|e| parse(1, e))?;
    if header.format != FEATURES_FORMAT {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("not a feature cache (format `{}`)", header.format),
        });
    }
    if header.version != FEATURES_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: FEATURES_VERSION,
        });
    }
    header.format = crate::io::DATASET_FORMAT.to_string();
    header.version = crate::io::DATASET_VERSION;
    let mut epochs = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        epochs.push(serde_json::from_str(&line).map_err(|e| parse(k + 2, e))?);
    }
    Ok(PreparedDataset { header, epochs })
}

/// Z-score statistics over the training rows of `feature_set`'s columns.
pub fn fit_normalizer(prepared: &PreparedDataset, feature_set: FeatureSet) -> Result<Normalizer> {
    let train = prepared.ready_in(Split::Train);
    Normalizer::fit(train.iter().flat_map(|p| p.raw.iter().map(|r| &r[..])), feature_set.width())
}

/// Normalized training sequences of one split; epochs without labels are skipped.
pub fn samples(prepared: &PreparedDataset, split: Split, normalizer: &Normalizer) -> Result<Vec<Sample>> {
    prepared
        .ready_in(split)
        .into_iter()
        .filter_map(|p| p.labels.as_ref().map(|l| (p, l)))
        .map(|(p, labels)| {
            Ok(Sample {
                features: normalizer.apply(&p.raw)?,
                targets: labels.clone(),
            })
        })
        .collect()
}

/// Sigma-model calibration samples from the training split.
pub fn calibration_samples(prepared: &PreparedDataset) -> Vec<CalibrationSample> {
    let mut out = Vec::new();
    for p in prepared.ready_in(Split::Train) {
        let Some(errors) = &p.truth_errors else { continue };
        for ((m, el), e) in p.epoch.measurements.iter().zip(&p.elevations).zip(errors) {
            out.push(CalibrationSample {
                elevation: *el,
                cn0: m.cn0,
                accel: p.accel,
                error: *e,
            });
        }
    }
    out
}

/// Trains (or resumes) a model on the training split with early stopping on
/// the validation split. A resumed run keeps the checkpoint's normalizer and
/// optimizer state; a run that had stopped early is reopened.
pub fn train_model(
    prepared: &PreparedDataset,
    feature_set: FeatureSet,
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
) -> Result<Checkpoint> {
    let (normalizer, state) = match resume {
        Some(ck) => {
            if ck.feature_set != feature_set {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint was trained on {:?} features, not {:?}",
                    ck.feature_set, feature_set
                )));
            }
            let mut state = ck
                .resume
                .clone()
                .ok_or_else(|| Error::MissingModel("resume state in checkpoint".into()))?;
            if state.stopped {
                state.reopen();
            }
            (ck.normalizer.clone(), Some(state))
        }
        None => (fit_normalizer(prepared, feature_set)?, None),
    };
    let train_set = samples(prepared, Split::Train, &normalizer)?;
    let val_set = samples(prepared, Split::Validation, &normalizer)?;
    let (model, report, state) = match state {
        Some(state) => train_from(state, &train_set, &val_set, cfg)?,
        None => train(&train_set, &val_set, cfg)?,
    };
    Ok(Checkpoint::new(feature_set, normalizer, cfg.clone(), model, report, Some(state)))
}

/// Sigma-model coefficients: `fixed` when given, else calibrated on the training split.
pub fn sota_params(prepared: &PreparedDataset, fixed: Option<SotaWeightParams>) -> Result<SotaWeightParams> {
    match fixed {
        Some(p) => Ok(p),
        None => Ok(calibrate_sota(&calibration_samples(prepared))?.params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_campaign, CampaignConfig};

    #[test]
    fn even_spacing_second_difference() {
        let t = [0.0, 0.5, 1.0, 1.5];
        let p: Vec<Option<EcefPosition>> = t.iter().map(|s| Some(EcefPosition::new(7e6 + 0.5 * 2.0 * s * s, 0.0, 0.0))).collect();
        let a = truth_accelerations(&t, &p);
        for v in a {
            assert!((v - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn prepared_rows_match_epoch_sizes() {
        let cfg = CampaignConfig {
            sessions_per_profile: 3,
            duration: 4.0,
            ..CampaignConfig::default()
        };
        let (ds, _) = generate_campaign(&cfg, 5).unwrap();
        let prepared = prepare_dataset(&ds, &SolverConfig::default());
        assert_eq!(prepared.epochs.len(), ds.records.len());
        for p in prepared.epochs.iter().filter_map(Prepared::ready) {
            assert_eq!(p.raw.len(), p.epoch.len());
            assert_eq!(p.labels.as_ref().unwrap().len(), p.epoch.len());
            assert!(p.elevations.iter().all(|e| *e > ELEVATION_MASK_DEG.to_radians()));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        write_features(&prepared, &path).unwrap();
        assert_eq!(read_features(&path).unwrap(), prepared);
    }
}
