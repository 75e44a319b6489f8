//! Experiment config: one TOML file per experiment.
//!
//! ```toml
//! run_id = "pointmass"
//! output_dir = "runs"
//! seed = 0
//!
//! [env]
//! name = "pointmass2d"     # other keys override the preset
//!
//! [data]
//! levels = [0.0, 0.25, 0.5, 0.75, 1.0]
//! per_level = 10
//!
//! [train]
//! budget = 500000
//! [train.filter]
//! filter_every = 100
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use smile_core::envs::{EnvName, EnvSpec, ExpertController};
use smile_core::mathcore::SeededRng;
use smile_core::trainer::TrainConfig;
use smile_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Root of every random stream in the experiment.
    #[serde(default)]
    pub seed: u64,
    pub env: EnvSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// An environment preset plus optional overrides of its fields.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub name: EnvName,
    pub horizon: Option<usize>,
    pub dt: Option<f64>,
    pub damping: Option<f64>,
    pub action_limit: Option<f64>,
    pub goal: Option<Vec<f64>>,
    pub spawn_low: Option<Vec<f64>>,
    pub spawn_high: Option<Vec<f64>>,
    pub action_cost: Option<f64>,
}

impl EnvSection {
    pub fn spec(&self) -> EnvSpec {
        let mut s = EnvSpec::by_name(self.name);
        if let Some(v) = self.horizon {
            s.horizon = v;
        }
        if let Some(v) = self.dt {
            s.dt = v;
        }
        if let Some(v) = self.damping {
            s.damping = v;
        }
        if let Some(v) = self.action_limit {
            s.action_limit = v;
        }
        if let Some(v) = &self.goal {
            s.goal = v.clone();
        }
        if let Some(v) = &self.spawn_low {
            s.spawn_low = v.clone();
        }
        if let Some(v) = &self.spawn_high {
            s.spawn_high = v.clone();
        }
        if let Some(v) = self.action_cost {
            s.action_cost = v;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub levels: Vec<f64>,
    pub per_level: usize,
    pub expert: ExpertController,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            per_level: 10,
            expert: ExpertController::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path)
    }

    /// Parses and validates. Syntax errors and unknown keys are reported
    /// with the line they occur on.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Format {
                path: path.to_path_buf(),
                line,
                msg: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::InvalidConfig(format!(
                "run_id {:?} must be a non-empty file name",
                self.run_id
            )));
        }
        self.env.spec().validate()?;
        if let Some(bad) = self.data.levels.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidConfig(format!("data.levels: {bad} must be finite and >= 0")));
        }
        let e = &self.data.expert;
        if !e.kp.is_finite() || !e.kd.is_finite() {
            return Err(Error::InvalidConfig("data.expert gains must be finite".into()));
        }
        self.train.validate()
    }

    pub fn root_rng(&self) -> SeededRng {
        SeededRng::new(self.seed)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }
}
