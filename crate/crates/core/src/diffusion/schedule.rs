use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Linear,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown schedule kind {other:?}"))),
        }
    }
}

const MAX_BETA: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

/// Coefficient tables of a discrete diffusion process, indexed by timestep
/// `t = 1..=T`. `alpha_bar(0)` is defined as 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: Option<ScheduleKind>,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, t_train: usize) -> Result<Self> {
        if t_train < 1 {
            return Err(Error::Config("diffusion needs at least one training step".into()));
        }
        let betas = match kind {
            ScheduleKind::Cosine => cosine_betas(t_train),
            ScheduleKind::Linear => linear_betas(t_train),
        };
        let mut s = Self::from_betas(betas)?;
        s.kind = Some(kind);
        Ok(s)
    }

    /// Builds a schedule from explicit `β_1..β_T`, each in `[0, 1)`.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("empty beta table".into()));
        }
        if beta.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = (0..beta.len())
            .map(|i| {
                if i == 0 {
                    0.0
                } else {
                    let var = beta[i] * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]);
                    if var.is_finite() {
                        var.sqrt()
                    } else {
                        0.0
                    }
                }
            })
            .collect();
        Ok(Self {
            kind: None,
            beta,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    pub fn kind(&self) -> Option<ScheduleKind> {
        self.kind
    }

    pub fn t_train(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.beta.len() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.beta.len(),
            });
        }
        Ok(t - 1)
    }

    pub fn check(&self, t: usize) -> Result<()> {
        self.index(t).map(|_| ())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t)?])
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bar[self.index(t)?])
    }

    /// Posterior standard deviation `σ_t`; zero at `t = 1`.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.sigma[self.index(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }
}

/// `ᾱ(t) = f(t)/f(0)`, `f(t) = cos²(((t/T) + s)/(1 + s) · π/2)`, betas capped at 0.999.
fn cosine_betas(t_train: usize) -> Vec<f64> {
    let f = |t: f64| {
        let x = (t / t_train as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    (1..=t_train)
        .map(|t| (1.0 - f(t as f64) / f((t - 1) as f64)).clamp(0.0, MAX_BETA))
        .collect()
}

/// Linear betas rescaled so that any `T` covers the same noise range as
/// `1e-4..0.02` over 1000 steps.
fn linear_betas(t_train: usize) -> Vec<f64> {
    let scale = 1000.0 / t_train as f64;
    let (start, end) = (scale * 1e-4, (scale * 0.02).min(MAX_BETA));
    if t_train == 1 {
        return vec![start.min(MAX_BETA)];
    }
    (0..t_train)
        .map(|i| (start + (end - start) * i as f64 / (t_train - 1) as f64).min(MAX_BETA))
        .collect()
}
