use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tensor};
use crate::diffusion::{sample, DiffusionConfig, NoiseSchedule};
use crate::error::{Error, Result};
use crate::policy::{ConditionedDenoiser, Normalizer, PolicyConfig, PolicyNet};

/// A noise-prediction network with its weights, sampler settings and data
/// normalization: everything needed to turn observations into actions.
#[derive(Clone, Debug)]
pub struct Policy {
    pub config: PolicyConfig,
    pub diffusion: DiffusionConfig,
    pub normalizer: Normalizer,
    pub net: PolicyNet,
    pub store: ParamStore<f32>,
}

/// Sampled action chunks in world units.
#[derive(Clone, Debug)]
pub struct Plan {
    /// `[B, T_p, D_a]`.
    pub actions: Tensor<f64>,
    pub network_evals: usize,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(
        config: PolicyConfig,
        diffusion: DiffusionConfig,
        normalizer: Normalizer,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        diffusion.validate()?;
        if normalizer.obs.dim() != config.obs_dim || normalizer.action.dim() != config.action_dim {
            return Err(Error::Config(format!(
                "normalizer dims ({}, {}) do not match obs_dim {} / action_dim {}",
                normalizer.obs.dim(),
                normalizer.action.dim(),
                config.obs_dim,
                config.action_dim
            )));
        }
        let mut store = ParamStore::new();
        let net = PolicyNet::new(&mut store, rng, &config)?;
        Ok(Self {
            config,
            diffusion,
            normalizer,
            net,
            store,
        })
    }

    /// Same structure with throwaway weights; used when loading checkpoints.
    pub(crate) fn skeleton(config: PolicyConfig, diffusion: DiffusionConfig, normalizer: Normalizer) -> Result<Self> {
        Self::new(config, diffusion, normalizer, &mut ChaCha8Rng::seed_from_u64(0))
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.diffusion.schedule, self.diffusion.t_train)
    }

    /// Samples one action chunk per observation window with the policy's own
    /// sampler settings. `obs` is `[B, T_o, D_o]` in world units; row `b`
    /// draws its noise from `rngs[b]`.
    pub fn plan<R: Rng>(&self, obs: &Tensor<f64>, rngs: &mut [R]) -> Result<Plan> {
        self.plan_with(&self.diffusion, obs, rngs)
    }

    /// As [`Policy::plan`] with a different sampler (same training schedule).
    pub fn plan_with<R: Rng>(&self, diffusion: &DiffusionConfig, obs: &Tensor<f64>, rngs: &mut [R]) -> Result<Plan> {
        let c = &self.config;
        let s = obs.shape();
        if s.len() != 3 || s[1] != c.obs_horizon || s[2] != c.obs_dim {
            return Err(Error::Shape {
                op: "policy observation",
                lhs: vec![0, c.obs_horizon, c.obs_dim],
                rhs: s.to_vec(),
            });
        }
        if diffusion.t_train != self.diffusion.t_train || diffusion.schedule != self.diffusion.schedule {
            return Err(Error::Config("sampler must reuse the training noise schedule".into()));
        }
        let mut o = obs.data().to_vec();
        self.normalizer.obs.normalize(&mut o)?;
        let obs32 = Tensor::<f64>::new(s.to_vec(), o)?.cast::<f32>();
        let den = ConditionedDenoiser {
            net: &self.net,
            store: &self.store,
            obs: obs32,
        };
        let sched = self.schedule()?;
        let out = sample(&den, &[s[0], c.horizon, c.action_dim], diffusion, &sched, rngs)?;
        let mut a = out.trajectory.to_f64_vec();
        self.normalizer.action.denormalize(&mut a)?;
        Ok(Plan {
            actions: Tensor::new(vec![s[0], c.horizon, c.action_dim], a)?,
            network_evals: out.network_evals,
        })
    }
}
