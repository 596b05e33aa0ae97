//! Leave-one-out residual matrix.
//!
//! Row `n` holds the residuals of every measurement against the equal-weight
//! solution computed without measurement `n`; the diagonal carries the
//! exclusion marker [`GAMMA`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{residual, Epoch, NavState};
use crate::solver::{solve_equal, SolverConfig};

/// Exclusion marker (m). Also fills rows whose subset solve failed.
pub const GAMMA: f64 = 1e4;

/// Width of [`ResidualMatrix::row_summary`].
pub const SUMMARY_WIDTH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualMatrix {
    n: usize,
    data: Vec<f64>,
    /// Rows whose subset could not be solved; they hold `GAMMA` everywhere.
    pub failed_rows: Vec<usize>,
}

impl ResidualMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n..(row + 1) * self.n]
    }

    pub fn off_diagonal(&self, row: usize) -> impl Iterator<Item = f64> + '_ {
        self.row(row)
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != row)
            .map(|(_, v)| *v)
    }

    /// Fixed-width summary of the off-diagonal entries of `row`, each clamped
    /// to `±GAMMA`: mean, standard deviation, min, max, median, mean absolute
    /// value, count above 5 m and count above 20 m in magnitude.
    pub fn row_summary(&self, row: usize) -> [f64; SUMMARY_WIDTH] {
        let mut v: Vec<f64> = self.off_diagonal(row).map(|x| x.clamp(-GAMMA, GAMMA)).collect();
        if v.is_empty() {
            return [0.0; SUMMARY_WIDTH];
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        let mean_abs = v.iter().map(|x| x.abs()).sum::<f64>() / n;
        let over5 = v.iter().filter(|x| x.abs() > 5.0).count() as f64;
        let over20 = v.iter().filter(|x| x.abs() > 20.0).count() as f64;
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) };
        [mean, std, v[0], v[v.len() - 1], median, mean_abs, over5, over20]
    }
}

/// Builds the residual matrix, warm-starting every subset solve from the
/// all-in-view equal-weight solution.
pub fn build_residual_matrix(epoch: &Epoch, cfg: &SolverConfig) -> Result<ResidualMatrix> {
    check_size(epoch)?;
    let init = match solve_equal(epoch, None, cfg) {
        Ok(rep) => Some(rep.state),
        Err(Error::NonConvergence(rep)) => Some(rep.state),
        Err(_) => None,
    };
    build_residual_matrix_from(epoch, init.as_ref(), cfg)
}

/// Same as [`build_residual_matrix`] with an explicit subset-solve start point.
pub fn build_residual_matrix_from(epoch: &Epoch, init: Option<&NavState>, cfg: &SolverConfig) -> Result<ResidualMatrix> {
    check_size(epoch)?;
    let n = epoch.len();
    let mut data = vec![GAMMA; n * n];
    let mut failed_rows = Vec::new();
    for excluded in 0..n {
        let subset = epoch.subset(|i| i != excluded);
        let solved = solve_equal(&subset, init, cfg).and_then(|rep| {
            epoch
                .measurements
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != excluded)
                .map(|(i, m)| residual(&rep.state, m).map(|r| (i, r)))
                .collect::<Result<Vec<_>>>()
        });
        match solved {
            Ok(values) => {
                for (i, r) in values {
                    data[excluded * n + i] = r;
                }
            }
            Err(_) => failed_rows.push(excluded),
        }
    }
    Ok(ResidualMatrix { n, data, failed_rows })
}

fn check_size(epoch: &Epoch) -> Result<()> {
    let need = epoch.state_dim() + 1;
    if epoch.len() < need {
        return Err(Error::NotEnoughMeasurements {
            have: epoch.len(),
            need,
        });
    }
    Ok(())
}
