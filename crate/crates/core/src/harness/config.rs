use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::DiffusionConfig;
use crate::envs::Task;
use crate::error::{Error, Result};
use crate::policy::PolicyConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Peak step size; decays to zero along a half cosine.
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Existing dataset file; generated from `demos`/`seed` when absent.
    pub path: Option<PathBuf>,
    pub demos: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            demos: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            seeds: vec![0, 1, 2],
        }
    }
}

/// Everything that determines a run. The output directory is where results
/// go, not part of the experiment, so it is left out of the config hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub policy: PolicyConfig,
    pub diffusion: DiffusionConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Reach,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            policy: PolicyConfig::default(),
            diffusion: DiffusionConfig::default(),
            optim: OptimConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.diffusion.validate()?;
        let o = &self.optim;
        if o.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(o.lr.is_finite() && o.lr >= 0.0 && o.weight_decay >= 0.0) {
            return Err(Error::Config(
                "lr and weight_decay must be finite and non-negative".into(),
            ));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::Config(
                "Adam betas must lie in [0, 1) and eps be positive".into(),
            ));
        }
        if self.policy.obs_dim != 2 || self.policy.action_dim != 2 {
            return Err(Error::Config("the planar tasks need obs_dim = action_dim = 2".into()));
        }
        if self.data.path.is_none() && self.data.demos == 0 {
            return Err(Error::Config("data.demos must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON form, without `out_dir`.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}
