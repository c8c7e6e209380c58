//! Experiment configuration: a TOML file, command-line overrides, and the
//! resolved record that is embedded in every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gwtail::{GwModel, Offspring};
use serde::{Deserialize, Serialize};

/// Invalid or unreadable configuration; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// `eps_grid` as written in the file: an explicit list or a log-uniform
/// range `{ from, to, points }` with both ends included.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EpsGridSpec {
    List(Vec<f64>),
    Geometric { from: f64, to: f64, points: usize },
}

impl EpsGridSpec {
    pub fn resolve(&self) -> Result<Vec<f64>, ConfigError> {
        match *self {
            EpsGridSpec::List(ref v) => Ok(v.clone()),
            EpsGridSpec::Geometric { from, to, points } => {
                if points < 2 {
                    return Err(bad("eps_grid range needs at least 2 points"));
                }
                if !(from > 0.0 && to > 0.0) {
                    return Err(bad("eps_grid range ends must be positive"));
                }
                let (lf, lt) = (from.ln(), to.ln());
                Ok((0..points)
                    .map(|i| (lf + (lt - lf) * i as f64 / (points - 1) as f64).exp())
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConditionSim {
    eps: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerify {
    trials: Option<u64>,
    depth: Option<usize>,
    mu1_trials: Option<u64>,
    mu1_depth: Option<usize>,
    scan_points: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    offspring: Option<BTreeMap<String, f64>>,
    eps_grid: Option<EpsGridSpec>,
    d: Option<i32>,
    depth: Option<usize>,
    trials: Option<u64>,
    seed: Option<u64>,
    threads: Option<usize>,
    output_path: Option<PathBuf>,
    condition_sim: Option<RawConditionSim>,
    verify: Option<RawVerify>,
}

/// Budgets of the verification suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySettings {
    /// Trials of the conditional runs on the main law.
    pub trials: u64,
    pub depth: usize,
    /// Trials and depth of the run on the linear-minimal-growth law.
    pub mu1_trials: u64,
    pub mu1_depth: usize,
    /// Uniform points of the regime scan (targeted points come on top).
    pub scan_points: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            trials: 1_000_000,
            depth: 25,
            mu1_trials: 10_000_000,
            mu1_depth: 30,
            scan_points: 200,
        }
    }
}

/// Fully resolved configuration. Field order is the serialization order
/// of the `# config:` header.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub offspring: BTreeMap<u32, f64>,
    pub eps_grid: Vec<f64>,
    pub d: i32,
    pub depth: usize,
    pub trials: u64,
    pub seed: u64,
    pub threads: Option<usize>,
    pub output_path: Option<PathBuf>,
    /// `eps` of `condition-sim`; defaults to the first grid point.
    pub condition_eps: Option<f64>,
    pub verify: VerifySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            offspring: BTreeMap::from([(2, 0.5), (3, 0.5)]),
            eps_grid: vec![0.2, 0.1, 0.05, 0.02, 0.01],
            d: 0,
            depth: 25,
            trials: 100_000,
            seed: 20_240_601,
            threads: None,
            output_path: None,
            condition_eps: None,
            verify: VerifySettings::default(),
        }
    }
}

/// Values given on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub eps: Option<f64>,
    pub depth: Option<usize>,
    pub trials: Option<u64>,
}

impl ExperimentConfig {
    /// Parse a TOML document on top of the defaults. Nothing is validated.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        let mut cfg = Self::default();
        if let Some(map) = raw.offspring {
            cfg.offspring = map
                .into_iter()
                .map(|(k, p)| {
                    k.trim()
                        .parse::<u32>()
                        .map(|k| (k, p))
                        .map_err(|_| bad(format!("offspring key {k:?} is not a nonnegative integer")))
                })
                .collect::<Result<_, _>>()?;
        }
        if let Some(grid) = raw.eps_grid {
            cfg.eps_grid = grid.resolve()?;
        }
        if let Some(d) = raw.d {
            cfg.d = d;
        }
        if let Some(v) = raw.depth {
            cfg.depth = v;
        }
        if let Some(v) = raw.trials {
            cfg.trials = v;
        }
        if let Some(v) = raw.seed {
            cfg.seed = v;
        }
        cfg.threads = raw.threads;
        cfg.output_path = raw.output_path;
        cfg.condition_eps = raw.condition_sim.and_then(|c| c.eps);
        if let Some(v) = raw.verify {
            let s = &mut cfg.verify;
            s.trials = v.trials.unwrap_or(s.trials);
            s.depth = v.depth.unwrap_or(s.depth);
            s.mu1_trials = v.mu1_trials.unwrap_or(s.mu1_trials);
            s.mu1_depth = v.mu1_depth.unwrap_or(s.mu1_depth);
            s.scan_points = v.scan_points.unwrap_or(s.scan_points);
        }
        Ok(cfg)
    }

    /// Read `path` (or start from the defaults), apply `overrides`, validate.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| bad(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.output_path = Some(v.clone());
        }
        if let Some(v) = o.threads {
            self.threads = Some(v);
        }
        if let Some(v) = o.eps {
            self.condition_eps = Some(v);
        }
        if let Some(v) = o.depth {
            self.depth = v;
        }
        if let Some(v) = o.trials {
            self.trials = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.distribution()?;
        if self.eps_grid.is_empty() {
            return Err(bad("eps_grid is empty"));
        }
        if let Some(e) = self.eps_grid.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(bad(format!("eps_grid value {e} not in (0, 1)")));
        }
        if self.eps_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(bad("eps_grid must be strictly decreasing"));
        }
        if !(-1..=1).contains(&self.d) {
            return Err(bad(format!("d = {} not in {{-1, 0, 1}}", self.d)));
        }
        for (name, depth) in [("depth", self.depth), ("verify.depth", self.verify.depth), ("verify.mu1_depth", self.verify.mu1_depth)] {
            if !(1..=200).contains(&depth) {
                return Err(bad(format!("{name} = {depth} not in 1..=200")));
            }
        }
        if self.trials == 0 || self.verify.trials == 0 || self.verify.mu1_trials == 0 {
            return Err(bad("trial counts must be positive"));
        }
        if self.verify.scan_points < 2 {
            return Err(bad("verify.scan_points must be at least 2"));
        }
        if self.threads == Some(0) {
            return Err(bad("threads must be positive"));
        }
        if let Some(e) = self.condition_eps {
            if !(e > 0.0 && e.is_finite()) {
                return Err(bad(format!("condition_sim eps = {e} must be positive")));
            }
        }
        Ok(())
    }

    pub fn distribution(&self) -> Result<Offspring, ConfigError> {
        Offspring::new(self.offspring.iter().map(|(&k, &p)| (k, p)))
            .map_err(|e| bad(format!("offspring: {e}")))
    }

    pub fn model(&self) -> Result<GwModel, ConfigError> {
        Ok(GwModel::with_defaults(self.distribution()?))
    }

    /// The `# config: {...}` line carried by every output file.
    pub fn header_line(&self) -> String {
        format!(
            "# config: {}",
            serde_json::to_string(self).expect("config serializes")
        )
    }
}
