//! Reference strategies: the parametric elevation/C/N0/acceleration sigma
//! model, its calibration, and standalone residual-test fault exclusion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{elevation_azimuth, GeodeticPosition};
use crate::model::Epoch;
use crate::solver::{solve_equal, solve_wls, SolveReport, SolverConfig, WeightVector};

/// Elevation mask shared by every strategy (degrees).
pub const ELEVATION_MASK_DEG: f64 = 5.0;

/// Coefficients of `σ² = (σ_Z² + σ_C² / (C/N0)_lin + σ_A² a²) / sin²θ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SotaWeightParams {
    /// m².
    pub sigma_zenith2: f64,
    /// m²·Hz, divided by the linear C/N0 ratio.
    pub sigma_cn0_2: f64,
    /// m² per (m/s²)².
    pub sigma_accel2: f64,
}

impl Default for SotaWeightParams {
    fn default() -> Self {
        Self {
            sigma_zenith2: 0.25,
            sigma_cn0_2: 2000.0,
            sigma_accel2: 0.0,
        }
    }
}

pub fn cn0_linear(cn0_dbhz: f64) -> f64 {
    10f64.powf(cn0_dbhz / 10.0)
}

/// Parametric pseudorange variance (m²). `theta` in radians, `cn0` in dB-Hz,
/// `accel` in m/s².
pub fn sota_sigma2(theta: f64, cn0: f64, accel: f64, p: &SotaWeightParams) -> Result<f64> {
    if !(theta > ELEVATION_MASK_DEG.to_radians()) {
        return Err(Error::HorizonSingularity {
            elevation_deg: theta.to_degrees(),
            mask_deg: ELEVATION_MASK_DEG,
        });
    }
    let s = theta.sin();
    Ok((p.sigma_zenith2 + p.sigma_cn0_2 / cn0_linear(cn0) + p.sigma_accel2 * accel * accel) / (s * s))
}

/// Per-measurement sigmas (m) of an epoch seen from `rx`.
pub fn sota_sigmas(epoch: &Epoch, rx: GeodeticPosition, accel: f64, p: &SotaWeightParams) -> Result<Vec<f64>> {
    epoch
        .measurements
        .iter()
        .map(|m| {
            let (el, _) = elevation_azimuth(m.sat_pos, rx)?;
            sota_sigma2(el, m.cn0, accel, p).map(f64::sqrt)
        })
        .collect()
}

/// One labeled link used for calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationSample {
    /// Radians.
    pub elevation: f64,
    /// dB-Hz.
    pub cn0: f64,
    /// m/s².
    pub accel: f64,
    /// True-position pseudorange error (m).
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: SotaWeightParams,
    /// False when every sample had zero acceleration; `sigma_accel2` is then 0.
    pub accel_identifiable: bool,
    pub bins: usize,
}

const ELEVATION_BIN_DEG: f64 = 5.0;
const CN0_BIN_DB: f64 = 2.0;
const ACCEL_BIN: f64 = 0.25;
const IRLS_ROUNDS: usize = 20;

/// Fits the sigma model to squared true errors.
///
/// Samples are binned by (elevation, C/N0, |a|); `e² sin²θ` is averaged per
/// bin and regressed on `[1, 1/(C/N0)_lin, a²]` by nonnegative least
/// squares, weighted by count over the squared fitted bin value.
pub fn calibrate_sota(samples: &[CalibrationSample]) -> Result<Calibration> {
    let usable: Vec<&CalibrationSample> = samples
        .iter()
        .filter(|s| s.elevation > ELEVATION_MASK_DEG.to_radians() && s.error.is_finite())
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let accel_identifiable = usable.iter().any(|s| s.accel != 0.0);

    // (elevation bin, cn0 bin, accel bin) -> (count, Σy, Σx1, Σx2)
    let mut bins: std::collections::BTreeMap<(i64, i64, i64), (f64, f64, f64, f64)> = Default::default();
    for s in &usable {
        let key = (
            (s.elevation.to_degrees() / ELEVATION_BIN_DEG).floor() as i64,
            (s.cn0 / CN0_BIN_DB).floor() as i64,
            (s.accel.abs() / ACCEL_BIN).floor() as i64,
        );
        let sin = s.elevation.sin();
        let e = bins.entry(key).or_default();
        e.0 += 1.0;
        e.1 += s.error * s.error * sin * sin;
        e.2 += 1.0 / cn0_linear(s.cn0);
        e.3 += s.accel * s.accel;
    }

    let columns = if accel_identifiable { 3 } else { 2 };
    let rows = bins.len();
    let mut design = DMatrix::zeros(rows, columns);
    let mut target = DVector::zeros(rows);
    let mut counts = Vec::with_capacity(rows);
    for (r, (count, sy, sx1, sx2)) in bins.values().enumerate() {
        target[r] = sy / count;
        design[(r, 0)] = 1.0;
        design[(r, 1)] = sx1 / count;
        if accel_identifiable {
            design[(r, 2)] = sx2 / count;
        }
        counts.push(*count);
    }
    // A bin mean of e² sin²θ has variance proportional to (its expectation)²
    // over the count, so reweight by the current fit until it settles.
    let mut scale: Vec<f64> = vec![1.0; rows];
    let mut coef = vec![0.0; columns];
    for _ in 0..IRLS_ROUNDS {
        let w: Vec<f64> = counts.iter().zip(&scale).map(|(c, s)| c.sqrt() / s).collect();
        let x = DMatrix::from_fn(rows, columns, |i, j| w[i] * design[(i, j)]);
        let y = DVector::from_fn(rows, |i, _| w[i] * target[i]);
        let next = nnls_small(&x, &y);
        let fit = &design * DVector::from_column_slice(&next);
        let floor = target.mean().max(f64::MIN_POSITIVE) * 1e-3;
        let settled = next.iter().zip(&coef).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1e-12));
        coef = next;
        scale = fit.iter().map(|f| f.max(floor)).collect();
        if settled {
            break;
        }
    }
    Ok(Calibration {
        params: SotaWeightParams {
            sigma_zenith2: coef[0],
            sigma_cn0_2: coef[1],
            sigma_accel2: if accel_identifiable { coef[2] } else { 0.0 },
        },
        accel_identifiable,
        bins: rows,
    })
}

/// Nonnegative least squares by exhaustive active-set enumeration; only
/// meant for a handful of columns.
fn nnls_small(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let k = x.ncols();
    // Column equilibration keeps 1/(C/N0) and a² regressors on comparable scales.
    let scale: Vec<f64> = (0..k)
        .map(|j| {
            let n = x.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let xs = DMatrix::from_fn(x.nrows(), k, |i, j| x[(i, j)] / scale[j]);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let cols: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let mut coef = vec![0.0; k];
        if !cols.is_empty() {
            let sub = DMatrix::from_fn(xs.nrows(), cols.len(), |i, j| xs[(i, cols[j])]);
            let Ok(sol) = sub.clone().svd(true, true).solve(y, 1e-12) else {
                continue;
            };
            if sol.iter().any(|v| *v < 0.0) {
                continue;
            }
            for (j, c) in cols.iter().enumerate() {
                coef[*c] = sol[j];
            }
        }
        let fit = &xs * DVector::from_column_slice(&coef);
        let sse = (y - fit).norm_squared();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, coef));
        }
    }
    let (_, coef) = best.expect("the empty set is always feasible");
    coef.iter().zip(&scale).map(|(c, s)| c / s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdeConfig {
    /// Normalized-residual test threshold.
    pub threshold: f64,
    pub max_exclusions: usize,
    pub min_retained: usize,
}

impl Default for FdeConfig {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            max_exclusions: 8,
            min_retained: 5,
        }
    }
}

impl FdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::config("fde.threshold", "must be > 0"));
        }
        if self.min_retained < 4 {
            return Err(Error::config("fde.min_retained", "must be >= 4 (three position unknowns plus a clock)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdeOutcome {
    pub report: SolveReport,
    /// Excluded measurement indices, in exclusion order.
    pub excluded: Vec<usize>,
    pub weights: WeightVector,
}

/// Normalized post-fit residuals `|rᵢ| / sqrt(Cov(r)ᵢᵢ)` of an equal-weight
/// fit, with `Cov(r) = (I − P) Σ (I − P)ᵀ`, `P` the equal-weight projection
/// and `Σ = diag(σ²)`. Rows without redundancy get 0.
pub fn normalized_residuals(epoch: &Epoch, report: &SolveReport, sigmas: &[f64]) -> Result<Vec<f64>> {
    let n = epoch.len();
    let constellations = epoch.constellations();
    let k = 3 + constellations.len();
    let rx = report.state.position.to_vector();
    let mut h = DMatrix::zeros(n, k);
    for (i, m) in epoch.measurements.iter().enumerate() {
        let d = rx - m.sat_pos.to_vector();
        let range = d.norm();
        if !(range > 0.0) {
            return Err(Error::ZeroRange);
        }
        for a in 0..3 {
            h[(i, a)] = d[a] / range;
        }
        let col = constellations.iter().position(|c| *c == m.constellation).unwrap();
        h[(i, 3 + col)] = 1.0;
    }
    let normal = h.transpose() * &h;
    let inv = normal.try_inverse().ok_or(Error::SingularGeometry(f64::INFINITY))?;
    let p = &h * inv * h.transpose();
    let i_minus_p = DMatrix::<f64>::identity(n, n) - p;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let var: f64 = (0..n).map(|j| i_minus_p[(i, j)].powi(2) * sigmas[j] * sigmas[j]).sum();
        let r = report.post_fit_residuals[i];
        out.push(if var > 1e-12 { r.abs() / var.sqrt() } else { 0.0 });
    }
    Ok(out)
}

/// Iterative residual-test exclusion followed by a sigma-weighted solve on the
/// survivors.
///
/// Each round solves with equal weights, normalizes the post-fit residuals
/// with the prior `sigmas` and drops the worst measurement while it exceeds
/// the threshold, the exclusion budget allows it and the survivors keep both
/// `min_retained` members and one redundant measurement.
pub fn fde_solve(epoch: &Epoch, sigmas: &[f64], cfg: &FdeConfig, solver: &SolverConfig) -> Result<FdeOutcome> {
    cfg.validate()?;
    if sigmas.len() != epoch.len() || sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidWeights("prior sigmas must be positive, one per measurement".into()));
    }
    if epoch.len() < cfg.min_retained + 1 {
        return Err(Error::NotEnoughMeasurements {
            have: epoch.len(),
            need: cfg.min_retained + 1,
        });
    }
    let mut active: Vec<usize> = (0..epoch.len()).collect();
    let mut excluded = Vec::new();
    let mut init = None;
    loop {
        let sub = epoch.subset(|i| active.contains(&i));
        let rep = solve_equal(&sub, init.as_ref(), solver)?;
        init = Some(rep.state.clone());
        if excluded.len() >= cfg.max_exclusions || active.len() <= cfg.min_retained {
            break;
        }
        let sub_sigmas: Vec<f64> = active.iter().map(|i| sigmas[*i]).collect();
        let stats = normalized_residuals(&sub, &rep, &sub_sigmas)?;
        let (worst, value) = stats
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        if value <= cfg.threshold {
            break;
        }
        let candidate = epoch.subset(|i| active.contains(&i) && i != active[worst]);
        if candidate.len() < candidate.state_dim() + 1 {
            break;
        }
        excluded.push(active.remove(worst));
    }
    let weights: Vec<f64> = (0..epoch.len())
        .map(|i| if excluded.contains(&i) { 0.0 } else { 1.0 / (sigmas[i] * sigmas[i]) })
        .collect();
    let weights = WeightVector::new(weights)?;
    let report = solve_wls(epoch, &weights, init.as_ref(), solver)?;
    Ok(FdeOutcome {
        report,
        excluded,
        weights,
    })
}
