//! Run configuration shared by every pipeline stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{FdeConfig, SotaWeightParams};
use crate::error::{Error, Result};
use crate::eval::Strategy;
use crate::nn::TrainConfig;
use crate::sim::CampaignConfig;
use crate::solver::SolverConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub strategies: Vec<Strategy>,
    /// Fixed sigma-model coefficients; calibrated on the training split when absent.
    pub sota: Option<SotaWeightParams>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            sota: None,
        }
    }
}

/// Top-level TOML document. `seed` is the only seed: it drives the simulator
/// and overrides `train.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub simulate: CampaignConfig,
    pub solver: SolverConfig,
    pub train: TrainConfig,
    pub fde: FdeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 42;
        Self {
            version: CONFIG_VERSION,
            seed,
            jobs: 0,
            simulate: CampaignConfig::default(),
            solver: SolverConfig::default(),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            fde: FdeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_column(text, s.start))
                .unwrap_or((1, 1));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.sync_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Propagates the top-level seed into the stage configs.
    pub fn sync_seed(&mut self) {
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::VersionMismatch {
                found: self.version,
                expected: CONFIG_VERSION,
            });
        }
        self.simulate.validate()?;
        self.solver.validate()?;
        self.train.validate()?;
        self.fde.validate()?;
        if self.eval.strategies.is_empty() {
            return Err(Error::config("eval.strategies", "needs at least one strategy"));
        }
        if let Some(p) = &self.eval.sota {
            if [p.sigma_zenith2, p.sigma_cn0_2, p.sigma_accel2].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::config("eval.sota", "coefficients must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn top_level_seed_reaches_training() {
        let cfg = RunConfig::from_toml_str("seed = 9\n[train]\nseed = 3\n").unwrap();
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn bad_probability_names_the_field() {
        let text = "[simulate]\nprofiles = [{ profile = \"suburban\", nlos_curve = [[5.0, 1.2], [90.0, 0.0]] }]\n";
        match RunConfig::from_toml_str(text) {
            Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, "simulate.profiles[0].nlos_curve[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_its_line() {
        match RunConfig::from_toml_str("seed = 1\n\n[solver]\nmax_iter = 3\n") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("max_iter"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
