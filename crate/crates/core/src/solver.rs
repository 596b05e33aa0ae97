//! Weighted least-squares single-epoch position solver.
//!
//! Minimizes `Σ ωᵢ (ρᵢ − hᵢ(X))²` with Levenberg-Marquardt. Internally the
//! clock biases are carried in meters (`c·δ`) and the normal matrix is
//! column-equilibrated before its condition number is checked, so the guard
//! measures geometry rather than the unit mismatch between meters and seconds.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{geodetic_to_ecef, EcefPosition, GeodeticPosition};
use crate::model::{range_residual, residual, ConstellationId, Epoch, NavState, SPEED_OF_LIGHT};

/// Per-measurement weights (1/m²) aligned with an epoch's canonical order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidWeights(format!("weight {i} is {w}")));
        }
        Ok(Self(weights))
    }

    pub fn equal(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Meters; the step norm covers position and `c·δ` components.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Upper bound on the equilibrated normal-matrix condition number.
    pub max_condition: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tolerance: 1e-6,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
            max_condition: 1e12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::config("solver.max_iterations", "must be >= 1"));
        }
        for (name, v) in [
            ("solver.step_tolerance", self.step_tolerance),
            ("solver.initial_damping", self.initial_damping),
            ("solver.max_condition", self.max_condition),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and > 0"));
            }
        }
        for (name, v) in [("solver.damping_up", self.damping_up), ("solver.damping_down", self.damping_down)] {
            if !(v > 1.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and > 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub state: NavState,
    /// Steps attempted, accepted or not.
    pub iterations: usize,
    pub converged: bool,
    /// Weighted sum of squared residuals (m²).
    pub final_cost: f64,
    pub post_fit_residuals: Vec<f64>,
    /// Norm of the last step (m).
    pub last_step: f64,
    /// Cost before the first step followed by the cost after every accepted step.
    pub cost_history: Vec<f64>,
}

/// Longest undamped step taken after convergence (m).
const POLISH_LIMIT: f64 = 1.0;

/// Cold-start point: the ellipsoid surface at latitude 0, longitude 0.
pub fn default_init() -> EcefPosition {
    geodetic_to_ecef(GeodeticPosition::new(0.0, 0.0, 0.0))
}

/// Jacobian of the stacked observation functions with respect to
/// `[x, y, z, δ_1 … δ_k]`, biases in seconds, constellations in canonical order.
pub fn jacobian(state: &NavState, epoch: &Epoch) -> Result<DMatrix<f64>> {
    let constellations = epoch.constellations();
    let mut h = DMatrix::zeros(epoch.len(), 3 + constellations.len());
    let rx = state.position.to_vector();
    for (i, m) in epoch.measurements.iter().enumerate() {
        state.bias(m.constellation)?;
        let d = rx - m.sat_pos.to_vector();
        let range = d.norm();
        if !(range > 0.0) {
            return Err(Error::ZeroRange);
        }
        for k in 0..3 {
            h[(i, k)] = d[k] / range;
        }
        let col = constellations.iter().position(|c| *c == m.constellation).unwrap();
        h[(i, 3 + col)] = SPEED_OF_LIGHT;
    }
    Ok(h)
}

/// First-order estimate covariance `(HᵀWH)⁻¹` (m² and s² blocks) at `state`.
pub fn linearized_covariance(state: &NavState, epoch: &Epoch, weights: &WeightVector) -> Result<DMatrix<f64>> {
    let h = jacobian(state, epoch)?;
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(weights.as_slice()));
    let normal = h.transpose() * w * &h;
    normal
        .try_inverse()
        .ok_or(Error::SingularGeometry(f64::INFINITY))
}

struct Problem<'a> {
    epoch: &'a Epoch,
    weights: &'a [f64],
    /// Column index for each measurement, or `None` when its constellation
    /// carries no weight and is not estimated.
    columns: Vec<Option<usize>>,
    estimated: Vec<ConstellationId>,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        3 + self.estimated.len()
    }

    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let rx = p.fixed_rows::<3>(0).into_owned();
        DVector::from_iterator(
            self.epoch.len(),
            self.epoch.measurements.iter().zip(&self.columns).map(|(m, col)| match col {
                Some(c) => range_residual(m.pseudorange, [rx.x, rx.y, rx.z], [m.sat_pos.x, m.sat_pos.y, m.sat_pos.z], p[3 + c]),
                None => 0.0,
            }),
        )
    }

    fn cost(&self, r: &DVector<f64>) -> f64 {
        r.iter().zip(self.weights).map(|(r, w)| w * r * r).sum()
    }

    /// `cost(r_new) - cost(r)` as a sum of products of differences.
    fn cost_change(&self, r: &DVector<f64>, r_new: &DVector<f64>) -> f64 {
        r.iter()
            .zip(r_new.iter())
            .zip(self.weights)
            .map(|((a, b), w)| w * (b - a) * (b + a))
            .sum()
    }

    /// Normal matrix `JᵀWJ` and gradient `JᵀWr`, clock columns in meters.
    fn normal_equations(&self, p: &DVector<f64>, r: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.dim();
        let rx = p.fixed_rows::<3>(0).into_owned();
        let mut normal = DMatrix::zeros(n, n);
        let mut grad = DVector::zeros(n);
        let mut row = vec![0.0; n];
        for (i, m) in self.epoch.measurements.iter().enumerate() {
            let w = self.weights[i];
            let Some(col) = self.columns[i] else { continue };
            if w == 0.0 {
                continue;
            }
            let d = rx - m.sat_pos.to_vector();
            let range = d.norm();
            if !(range > 0.0) {
                return Err(Error::ZeroRange);
            }
            row.iter_mut().for_each(|v| *v = 0.0);
            row[0] = d.x / range;
            row[1] = d.y / range;
            row[2] = d.z / range;
            row[3 + col] = 1.0;
            for a in 0..n {
                if row[a] == 0.0 {
                    continue;
                }
                grad[a] += w * row[a] * r[i];
                for b in 0..n {
                    normal[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        Ok((normal, grad))
    }
}

/// Condition number of the diagonally equilibrated symmetric matrix.
fn equilibrated_condition(normal: &DMatrix<f64>) -> f64 {
    let n = normal.nrows();
    let d: Vec<f64> = (0..n).map(|i| normal[(i, i)].sqrt()).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return f64::INFINITY;
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| normal[(i, j)] / (d[i] * d[j]));
    let eig = SymmetricEigen::new(scaled);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves the weighted least-squares problem for one epoch.
///
/// Without `init` the solver starts from [`default_init`] with zero clock
/// biases. Constellations whose measurements all carry zero weight are not
/// estimated; their reported bias is the median clock offset implied by their
/// measurements at the final position, which leaves the cost unchanged.
pub fn solve_wls(
    epoch: &Epoch,
    weights: &WeightVector,
    init: Option<&NavState>,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    if weights.len() != epoch.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} measurements",
            weights.len(),
            epoch.len()
        )));
    }
    let w = weights.as_slice();
    let mut estimated: Vec<ConstellationId> = epoch
        .measurements
        .iter()
        .zip(w)
        .filter(|(_, w)| **w > 0.0)
        .map(|(m, _)| m.constellation)
        .collect();
    estimated.sort();
    estimated.dedup();
    let columns: Vec<Option<usize>> = epoch
        .measurements
        .iter()
        .map(|m| estimated.iter().position(|c| *c == m.constellation))
        .collect();
    let problem = Problem {
        epoch,
        weights: w,
        columns,
        estimated,
    };
    let positive = w.iter().filter(|w| **w > 0.0).count();
    if positive < problem.dim() {
        return Err(Error::NotEnoughMeasurements {
            have: positive,
            need: problem.dim(),
        });
    }

    let mut p = DVector::zeros(problem.dim());
    let start = init.map(|s| s.position).unwrap_or_else(default_init);
    p[0] = start.x;
    p[1] = start.y;
    p[2] = start.z;
    if let Some(s) = init {
        for (k, c) in problem.estimated.iter().enumerate() {
            p[3 + k] = s.clock_bias.get(c).copied().unwrap_or(0.0) * SPEED_OF_LIGHT;
        }
    }

    let mut r = problem.residuals(&p);
    let mut cost = problem.cost(&r);
    let mut cost_history = vec![cost];
    let mut damping = cfg.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_step = f64::INFINITY;

    'outer: while iterations < cfg.max_iterations {
        let (normal, grad) = problem.normal_equations(&p, &r)?;
        let cond = equilibrated_condition(&normal);
        if !(cond <= cfg.max_condition) {
            return Err(Error::SingularGeometry(cond));
        }
        loop {
            iterations += 1;
            let mut damped = normal.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += damping * normal[(i, i)];
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&grad),
                None => return Err(Error::SingularGeometry(cond)),
            };
            last_step = step.norm();
            let candidate = &p + &step;
            let r_new = problem.residuals(&candidate);
            let change = problem.cost_change(&r, &r_new);
            if change <= 0.0 {
                cost = problem.cost(&r_new).min(cost);
                p = candidate;
                r = r_new;
                cost_history.push(cost);
                damping /= cfg.damping_down;
                if last_step < cfg.step_tolerance {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            damping *= cfg.damping_up;
            if last_step < cfg.step_tolerance {
                // No representable descent left.
                converged = true;
                break 'outer;
            }
            if iterations >= cfg.max_iterations {
                break 'outer;
            }
        }
    }

    // Undamped refinement: steps are taken while they keep shrinking, the
    // first no longer than POLISH_LIMIT.
    if converged {
        let mut limit = POLISH_LIMIT;
        while iterations < cfg.max_iterations {
            let (normal, grad) = problem.normal_equations(&p, &r)?;
            let Some(ch) = normal.cholesky() else { break };
            iterations += 1;
            let step = ch.solve(&grad);
            let len = step.norm();
            if !(len < limit) {
                break;
            }
            p += step;
            r = problem.residuals(&p);
            cost = problem.cost(&r);
            if cost <= cost_history[cost_history.len() - 1] {
                cost_history.push(cost);
            }
            last_step = len;
            if len < cfg.step_tolerance * 1e-3 {
                break;
            }
            limit = len;
        }
    }

    let position = EcefPosition::new(p[0], p[1], p[2]);
    let mut clock_bias = BTreeMap::new();
    for (k, c) in problem.estimated.iter().enumerate() {
        clock_bias.insert(*c, p[3 + k] / SPEED_OF_LIGHT);
    }
    for c in epoch.constellations() {
        if clock_bias.contains_key(&c) {
            continue;
        }
        let mut offsets: Vec<f64> = epoch
            .measurements
            .iter()
            .filter(|m| m.constellation == c)
            .map(|m| m.pseudorange - position.distance(m.sat_pos))
            .collect();
        offsets.sort_by(f64::total_cmp);
        let mid = offsets.len() / 2;
        let median = if offsets.len() % 2 == 1 {
            offsets[mid]
        } else {
            0.5 * (offsets[mid - 1] + offsets[mid])
        };
        clock_bias.insert(c, median / SPEED_OF_LIGHT);
    }
    let state = NavState { position, clock_bias };
    let post_fit_residuals = epoch
        .measurements
        .iter()
        .map(|m| residual(&state, m))
        .collect::<Result<Vec<_>>>()?;
    let report = SolveReport {
        state,
        iterations,
        converged,
        final_cost: cost,
        post_fit_residuals,
        last_step,
        cost_history,
    };
    if converged {
        Ok(report)
    } else {
        Err(Error::NonConvergence(Box::new(report)))
    }
}

/// Equal-weight solution over all measurements.
pub fn solve_equal(epoch: &Epoch, init: Option<&NavState>, cfg: &SolverConfig) -> Result<SolveReport> {
    solve_wls(epoch, &WeightVector::equal(epoch.len()), init, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{enu_to_ecef, EnuVector};
    use crate::model::{Band, PseudorangeMeasurement};

    fn synthetic(n_per: usize, constellations: &[ConstellationId], rx: GeodeticPosition) -> (Epoch, NavState) {
        let truth = geodetic_to_ecef(rx);
        let mut state = NavState::new(truth);
        let mut ms = Vec::new();
        for (ci, c) in constellations.iter().enumerate() {
            state.clock_bias.insert(*c, 1e-4 * (ci as f64 + 1.0) - 3e-4);
            for k in 0..n_per {
                let az = (k as f64 * 137.5 + ci as f64 * 40.0).to_radians();
                let el = (10.0 + (k as f64 * 23.0 + ci as f64 * 11.0) % 75.0).to_radians();
                let dir = EnuVector {
                    east: el.cos() * az.sin(),
                    north: el.cos() * az.cos(),
                    up: el.sin(),
                };
                let r = 2.2e7;
                let sat = enu_to_ecef(
                    EnuVector {
                        east: dir.east * r,
                        north: dir.north * r,
                        up: dir.up * r,
                    },
                    rx,
                );
                let mut m = PseudorangeMeasurement {
                    constellation: *c,
                    sv_id: k as u16 + 1,
                    band: Band::L1,
                    pseudorange: 0.0,
                    sat_pos: sat,
                    cn0: 45.0,
                    lock_time: 10.0,
                };
                m.pseudorange = crate::model::observation_function(&state, &m).unwrap();
                ms.push(m);
            }
        }
        (Epoch::new(0.0, ms, Some(truth)).unwrap(), state)
    }

    #[test]
    fn noise_free_cold_start() {
        let rx = GeodeticPosition::from_degrees(45.19, 5.72, 212.0);
        let (epoch, truth) = synthetic(4, &[ConstellationId::Gps, ConstellationId::Galileo], rx);
        let rep = solve_equal(&epoch, None, &SolverConfig::default()).unwrap();
        assert!(rep.state.position.distance(truth.position) < 1e-6);
        for (c, b) in &truth.clock_bias {
            assert!((rep.state.clock_bias[c] - b).abs() < 1e-12);
        }
        assert!(rep.converged && rep.last_step < 1e-6);
        assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_weight_drops_the_row() {
        let rx = GeodeticPosition::from_degrees(-33.0, 151.0, 40.0);
        let (mut epoch, _) = synthetic(5, &[ConstellationId::Gps, ConstellationId::Glonass], rx);
        epoch.measurements[3].pseudorange += 100.0;
        let mut w = vec![1.0; epoch.len()];
        w[3] = 0.0;
        let cfg = SolverConfig::default();
        let a = solve_wls(&epoch, &WeightVector::new(w).unwrap(), None, &cfg).unwrap();
        let removed = epoch.subset(|i| i != 3);
        let b = solve_equal(&removed, None, &cfg).unwrap();
        assert!(a.state.position.distance(b.state.position) < 1e-9);
        assert!((a.post_fit_residuals[3] - 100.0).abs() < 1e-6);
    }

    #[test]
    fn unweighted_constellation_gets_median_bias() {
        let rx = GeodeticPosition::from_degrees(10.0, 20.0, 0.0);
        let (epoch, truth) = synthetic(5, &[ConstellationId::Gps, ConstellationId::Beidou], rx);
        let w: Vec<f64> = epoch
            .measurements
            .iter()
            .map(|m| if m.constellation == ConstellationId::Beidou { 0.0 } else { 1.0 })
            .collect();
        let rep = solve_wls(&epoch, &WeightVector::new(w).unwrap(), None, &SolverConfig::default()).unwrap();
        let b = rep.state.clock_bias[&ConstellationId::Beidou];
        assert!((b - truth.clock_bias[&ConstellationId::Beidou]).abs() < 1e-12);
    }

    #[test]
    fn too_few_measurements() {
        let rx = GeodeticPosition::from_degrees(10.0, 20.0, 0.0);
        let (epoch, _) = synthetic(2, &[ConstellationId::Gps, ConstellationId::Galileo], rx);
        assert!(matches!(
            solve_equal(&epoch, None, &SolverConfig::default()),
            Err(Error::NotEnoughMeasurements { have: 4, need: 5 })
        ));
    }

    #[test]
    fn colocated_satellites_are_singular() {
        let rx = GeodeticPosition::from_degrees(10.0, 20.0, 0.0);
        let (mut epoch, _) = synthetic(6, &[ConstellationId::Gps], rx);
        let sat = epoch.measurements[0].sat_pos;
        for m in epoch.measurements.iter_mut() {
            m.sat_pos = sat;
        }
        assert!(matches!(
            solve_equal(&epoch, None, &SolverConfig::default()),
            Err(Error::SingularGeometry(_))
        ));
    }

    #[test]
    fn nonconvergence_carries_best_iterate() {
        let rx = GeodeticPosition::from_degrees(10.0, 20.0, 0.0);
        let (epoch, _) = synthetic(6, &[ConstellationId::Gps], rx);
        let cfg = SolverConfig {
            max_iterations: 2,
            ..SolverConfig::default()
        };
        match solve_equal(&epoch, None, &cfg) {
            Err(Error::NonConvergence(rep)) => {
                assert!(!rep.converged);
                assert_eq!(rep.iterations, 2);
                assert!(rep.final_cost <= rep.cost_history[0]);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn weight_validation() {
        assert!(WeightVector::new(vec![1.0, -1.0]).is_err());
        assert!(WeightVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(WeightVector::new(vec![0.0, 2.0]).is_ok());
    }
}
