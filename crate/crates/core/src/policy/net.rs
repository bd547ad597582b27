use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::diffusion::{Denoiser, NoisePredictor};
use crate::error::Result;
use crate::policy::{Arch, Mtdp, Mudp, PolicyConfig};

/// Either noise-prediction network.
#[derive(Clone, Debug)]
pub enum PolicyNet {
    Mtdp(Mtdp),
    Mudp(Mudp),
}

impl PolicyNet {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, rng: &mut R, cfg: &PolicyConfig) -> Result<Self> {
        Ok(match cfg.arch {
            Arch::Mtdp => Self::Mtdp(Mtdp::new(store, rng, cfg)?),
            Arch::Mudp => Self::Mudp(Mudp::new(store, rng, cfg)?),
        })
    }
}

impl NoisePredictor for PolicyNet {
    fn predict<F: Scalar>(&self, g: &mut Graph<'_, F>, x_t: Var, obs: Var, t: &[usize]) -> Result<Var> {
        match self {
            Self::Mtdp(m) => m.forward(g, x_t, obs, t),
            Self::Mudp(m) => m.forward(g, x_t, obs, t),
        }
    }
}

/// Binds a network, its weights and a normalized observation batch into a
/// [`Denoiser`] for the samplers.
pub struct ConditionedDenoiser<'a, F: Scalar, M: NoisePredictor> {
    pub net: &'a M,
    pub store: &'a ParamStore<F>,
    /// `[B, T_o, D_o]`, normalized.
    pub obs: Tensor<F>,
}

impl<F: Scalar, M: NoisePredictor> Denoiser<F> for ConditionedDenoiser<'_, F, M> {
    fn predict_noise(&self, x_t: &Tensor<F>, t: usize) -> Result<Tensor<F>> {
        let mut g = Graph::inference(self.store);
        let x = g.constant(x_t.clone());
        let o = g.constant(self.obs.clone());
        let ts = vec![t; x_t.shape()[0]];
        let y = self.net.predict(&mut g, x, o, &ts)?;
        Ok(g.value(y).clone())
    }
}
