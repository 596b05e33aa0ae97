//! Position-error metrics and the weighting-strategy comparison.
//!
//! Quantiles use linear interpolation between order statistics at the
//! zero-based rank `p·(n−1)`. Epochs where a strategy fails yield censored
//! records: they are excluded from the quantiles and counted as failures.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fde_solve, sota_sigmas, FdeConfig, SotaWeightParams};
use crate::error::{Error, Result};
use crate::geo::{ecef_delta_to_enu, ecef_to_geodetic, EcefPosition};
use crate::model::NavState;
use crate::nn::{predict_weights, weights_from_quality, Checkpoint};
use crate::pipeline::{Prepared, PreparedEpoch};
use crate::solver::{solve_wls, SolveReport, SolverConfig, WeightVector};

/// Weights below this fraction of the epoch's largest weight count as exclusions.
pub const ZERO_WEIGHT_RATIO: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Weights from true errors, `ω = 1/(ρ − h(X_true))²` (oracle bound).
    GroundTruth,
    /// Network on the full feature matrix.
    NnFull,
    /// Network on residual-matrix summaries only.
    NnResidual,
    /// Residual-test exclusion, then sigma-model weights.
    FdeSota,
    Equal,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::GroundTruth,
        Strategy::NnFull,
        Strategy::NnResidual,
        Strategy::FdeSota,
        Strategy::Equal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::GroundTruth => "ground_truth",
            Strategy::NnFull => "nn_full",
            Strategy::NnResidual => "nn_residual",
            Strategy::FdeSota => "fde_sota",
            Strategy::Equal => "equal",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Horizontal and vertical error of `estimate` in the ENU frame at `truth`.
pub fn position_errors(estimate: &NavState, truth: EcefPosition) -> Result<(f64, f64)> {
    let reference = ecef_to_geodetic(truth)?;
    let enu = ecef_delta_to_enu(estimate.position.to_vector() - truth.to_vector(), reference);
    Ok((enu.horizontal(), enu.up.abs()))
}

/// Linear interpolation between order statistics at rank `p·(n−1)`.
pub fn empirical_quantile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(sorted_quantile(&v, p))
}

fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let rank = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub session_id: u32,
    pub t: f64,
    pub strategy: Strategy,
    /// `None` when censored.
    pub h_err_m: Option<f64>,
    pub v_err_m: Option<f64>,
    pub converged: bool,
    pub n_sv: usize,
    pub n_zero_weight: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q50: f64,
    pub q68: f64,
    pub q95: f64,
}

impl Quantiles {
    fn of_sorted(sorted: &[f64]) -> Self {
        Self {
            q50: sorted_quantile(sorted, 0.50),
            q68: sorted_quantile(sorted, 0.68),
            q95: sorted_quantile(sorted, 0.95),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfSummary {
    pub strategy: Strategy,
    /// Uncensored samples.
    pub count: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub horizontal: Quantiles,
    pub vertical: Quantiles,
    #[serde(skip)]
    pub horizontal_sorted: Vec<f64>,
    #[serde(skip)]
    pub vertical_sorted: Vec<f64>,
}

/// Summaries per strategy in `strategies` order. Strategies whose every
/// record is censored are skipped.
pub fn summarize(records: &[ErrorRecord], strategies: &[Strategy]) -> Vec<CdfSummary> {
    strategies
        .iter()
        .filter_map(|s| {
            let mine: Vec<&ErrorRecord> = records.iter().filter(|r| r.strategy == *s).collect();
            let mut h: Vec<f64> = mine.iter().filter_map(|r| r.h_err_m).collect();
            let mut v: Vec<f64> = mine.iter().filter_map(|r| r.v_err_m).collect();
            if h.is_empty() {
                return None;
            }
            h.sort_by(f64::total_cmp);
            v.sort_by(f64::total_cmp);
            let failures = mine.len() - h.len();
            Some(CdfSummary {
                strategy: *s,
                count: h.len(),
                failures,
                failure_rate: failures as f64 / mine.len() as f64,
                horizontal: Quantiles::of_sorted(&h),
                vertical: Quantiles::of_sorted(&v),
                horizontal_sorted: h,
                vertical_sorted: v,
            })
        })
        .collect()
}

/// Everything a comparison run needs besides the epochs.
pub struct Strategies<'a> {
    pub list: Vec<Strategy>,
    pub full: Option<&'a Checkpoint>,
    pub residual: Option<&'a Checkpoint>,
    pub sota: SotaWeightParams,
    pub fde: FdeConfig,
    pub solver: SolverConfig,
}

impl Strategies<'_> {
    /// Fails with `MissingModel` naming the first strategy whose model is absent.
    pub fn check(&self) -> Result<()> {
        for s in &self.list {
            let missing = match s {
                Strategy::NnFull => self.full.is_none(),
                Strategy::NnResidual => self.residual.is_none(),
                _ => false,
            };
            if missing {
                return Err(Error::MissingModel(s.as_str().to_string()));
            }
        }
        Ok(())
    }
}

fn count_small(w: &WeightVector) -> usize {
    let max = w.as_slice().iter().fold(0.0f64, |a, b| a.max(*b));
    w.as_slice().iter().filter(|x| **x <= ZERO_WEIGHT_RATIO * max).count()
}

fn nn_weights(ck: &Checkpoint, p: &PreparedEpoch) -> Result<WeightVector> {
    let fm = ck.normalizer.apply(&p.raw)?;
    predict_weights(&ck.model, &fm)
}

/// Solution and zero-weight count of one strategy on one epoch.
pub fn run_strategy(strategy: Strategy, p: &PreparedEpoch, s: &Strategies) -> Result<(SolveReport, usize)> {
    let weighted = |w: WeightVector| -> Result<(SolveReport, usize)> {
        let z = count_small(&w);
        Ok((solve_wls(&p.epoch, &w, Some(&p.anchor), &s.solver)?, z))
    };
    match strategy {
        Strategy::GroundTruth => {
            let labels = p.labels.as_ref().ok_or(Error::MissingTruth)?;
            weighted(weights_from_quality(labels))
        }
        Strategy::NnFull => weighted(nn_weights(s.full.ok_or(Error::MissingModel("nn_full".into()))?, p)?),
        Strategy::NnResidual => weighted(nn_weights(
            s.residual.ok_or(Error::MissingModel("nn_residual".into()))?,
            p,
        )?),
        Strategy::FdeSota => {
            let rx = ecef_to_geodetic(p.anchor.position)?;
            let sigmas: Vec<f64> = sota_sigmas(&p.epoch, rx, p.accel, &s.sota)?;
            let out = fde_solve(&p.epoch, &sigmas, &s.fde, &s.solver)?;
            Ok((out.report, out.excluded.len()))
        }
        Strategy::Equal => weighted(WeightVector::equal(p.epoch.len())),
    }
}

fn evaluate_epoch(prepared: &Prepared, s: &Strategies) -> Vec<ErrorRecord> {
    s.list
        .iter()
        .map(|strategy| {
            let censored = |n_sv| ErrorRecord {
                session_id: prepared.session_id(),
                t: prepared.time(),
                strategy: *strategy,
                h_err_m: None,
                v_err_m: None,
                converged: false,
                n_sv,
                n_zero_weight: 0,
            };
            let p = match prepared {
                Prepared::Ready(p) => p,
                Prepared::Failed(f) => return censored(f.n_sv),
            };
            let (Some(truth), Ok((report, zero))) = (p.epoch.truth, run_strategy(*strategy, p, s)) else {
                return censored(p.epoch.len());
            };
            match position_errors(&report.state, truth) {
                Ok((h, v)) if report.converged => ErrorRecord {
                    h_err_m: Some(h),
                    v_err_m: Some(v),
                    converged: true,
                    n_zero_weight: zero,
                    ..censored(p.epoch.len())
                },
                _ => censored(p.epoch.len()),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub sota: SotaWeightParams,
    pub fde: FdeConfig,
    pub epochs: usize,
    pub summaries: Vec<CdfSummary>,
    #[serde(skip)]
    pub records: Vec<ErrorRecord>,
}

impl EvalReport {
    pub fn summary(&self, s: Strategy) -> Option<&CdfSummary> {
        self.summaries.iter().find(|c| c.strategy == s)
    }
}

/// Runs every strategy on every epoch. Records follow epoch order, then
/// strategy order, independent of the thread count.
pub fn compare_strategies(epochs: &[&Prepared], s: &Strategies, seed: u64) -> Result<EvalReport> {
    s.check()?;
    let per_epoch: Vec<Vec<ErrorRecord>> = epochs.par_iter().map(|p| evaluate_epoch(p, s)).collect();
    let records: Vec<ErrorRecord> = per_epoch.into_iter().flatten().collect();
    Ok(EvalReport {
        seed,
        sota: s.sota,
        fde: s.fde.clone(),
        epochs: epochs.len(),
        summaries: summarize(&records, &s.list),
        records,
    })
}

pub const CSV_HEADER: [&str; 8] = ["session_id", "t", "strategy", "h_err_m", "v_err_m", "converged", "n_sv", "n_zero_weight"];

pub fn write_records_csv(records: &[ErrorRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in records {
        w.write_record([
            r.session_id.to_string(),
            format!("{:.3}", r.t),
            r.strategy.to_string(),
            opt(r.h_err_m),
            opt(r.v_err_m),
            r.converged.to_string(),
            r.n_sv.to_string(),
            r.n_zero_weight.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<EvalReport> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Fixed-width text table of a summary, one row per strategy.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>8} {:>8} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "strategy", "epochs", "failed", "h50 [m]", "h68 [m]", "h95 [m]", "v68 [m]", "v95 [m]"
    ));
    for s in &report.summaries {
        out.push_str(&format!(
            "{:<14} {:>8} {:>8} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3}\n",
            s.strategy.as_str(),
            s.count,
            s.failures,
            s.horizontal.q50,
            s.horizontal.q68,
            s.horizontal.q95,
            s.vertical.q68,
            s.vertical.q95
        ));
    }
    out
}
