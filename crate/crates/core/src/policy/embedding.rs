use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp;

/// Sinusoidal features `[sin(t f_0) … sin(t f_{h−1}), cos(t f_0) … cos(t f_{h−1})]`
/// with `f_j = 10000^(−j/(h−1))`, `h = dim/2`. Returns `[B, dim]`.
pub fn sinusoidal<F: Scalar>(t: &[usize], dim: usize) -> Result<Tensor<F>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "timestep embedding dim {dim} must be even and positive"
        )));
    }
    let half = dim / 2;
    let freq: Vec<f64> = (0..half)
        .map(|j| {
            if half == 1 {
                1.0
            } else {
                (-(10_000f64.ln()) * j as f64 / (half - 1) as f64).exp()
            }
        })
        .collect();
    let mut data = Vec::with_capacity(t.len() * dim);
    for &tb in t {
        let tf = tb as f64;
        data.extend(freq.iter().map(|f| F::from_f64((tf * f).sin())));
        data.extend(freq.iter().map(|f| F::from_f64((tf * f).cos())));
    }
    Tensor::new(vec![t.len(), dim], data)
}

/// Sinusoidal features followed by a two-layer MLP.
#[derive(Clone, Debug)]
pub struct TimestepEmbedding {
    pub dim: usize,
    pub mlp: Mlp,
}

impl TimestepEmbedding {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        dim: usize,
        out: usize,
    ) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "timestep embedding dim {dim} must be even and positive"
            )));
        }
        Ok(Self {
            dim,
            mlp: Mlp::new(store, rng, &format!("{name}.mlp"), dim, 4 * dim, out)?,
        })
    }

    /// `[B, out]`.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, t: &[usize]) -> Result<Var> {
        let s = g.constant(sinusoidal(t, self.dim)?);
        self.mlp.forward(g, s)
    }
}

/// Per-step MLP over the observation window: `[B, T_o, D_o] → [B, T_o, d]`.
#[derive(Clone, Debug)]
pub struct ObsEncoder {
    pub mlp: Mlp,
}

impl ObsEncoder {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        obs_dim: usize,
        d_model: usize,
    ) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(store, rng, &format!("{name}.mlp"), obs_dim, d_model, d_model)?,
        })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, obs: Var) -> Result<Var> {
        if !g.value(obs).is_finite() {
            return Err(Error::NonFiniteInput("observation".into()));
        }
        self.mlp.forward(g, obs)
    }
}

/// Condition tokens: the timestep token followed by one token per observation
/// step, `[B, T_o + 1, d]`.
pub fn condition_tokens<F: Scalar>(
    g: &mut Graph<'_, F>,
    time: &TimestepEmbedding,
    obs_enc: &ObsEncoder,
    obs: Var,
    t: &[usize],
) -> Result<Var> {
    let te = time.forward(g, t)?;
    let d = g.shape(te)[1];
    let te = g.reshape(te, &[t.len(), 1, d])?;
    let ot = obs_enc.forward(g, obs)?;
    g.concat(&[te, ot], 1)
}
