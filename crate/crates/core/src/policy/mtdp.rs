use rand::Rng;

use crate::attention::{pool_condition, DecoderBlock, EncoderBlock};
use crate::autodiff::{Graph, ParamId, ParamStore, Scalar, Var};
use crate::error::{Error, Result};
use crate::nn::{init_tensor, Init, LayerNorm, Linear};
use crate::policy::embedding::{condition_tokens, ObsEncoder, TimestepEmbedding};
use crate::policy::PolicyConfig;

/// Transformer noise predictor: self-attention encoder over condition tokens,
/// modulated-attention decoder over action tokens.
#[derive(Clone, Debug)]
pub struct Mtdp {
    pub time: TimestepEmbedding,
    pub obs: ObsEncoder,
    pub encoder: Vec<EncoderBlock>,
    pub enc_norm: LayerNorm,
    pub action_in: Linear,
    pub pos: ParamId,
    pub decoder: Vec<DecoderBlock>,
    pub out_norm: LayerNorm,
    pub head: Linear,
    horizon: usize,
    action_dim: usize,
}

impl Mtdp {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, rng: &mut R, cfg: &PolicyConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let time = TimestepEmbedding::new(store, rng, "time", d, d)?;
        let obs = ObsEncoder::new(store, rng, "obs", cfg.obs_dim, d)?;
        let encoder = (0..cfg.n_encoder_layers)
            .map(|i| EncoderBlock::new(store, rng, &format!("encoder.{i}"), d, cfg.n_heads, cfg.ffn_mult))
            .collect::<Result<Vec<_>>>()?;
        let enc_norm = LayerNorm::new(store, "encoder.norm", d)?;
        let action_in = Linear::new(store, rng, "action_in", cfg.action_dim, d, Init::FanIn)?;
        let pos = store.register("action_pos", init_tensor(&[cfg.horizon, d], d, Init::Normal(0.02), rng))?;
        let decoder = (0..cfg.n_decoder_layers)
            .map(|i| {
                DecoderBlock::new(
                    store,
                    rng,
                    &format!("decoder.{i}"),
                    cfg.variant,
                    d,
                    d,
                    cfg.n_heads,
                    cfg.ffn_mult,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            time,
            obs,
            encoder,
            enc_norm,
            action_in,
            pos,
            decoder,
            out_norm: LayerNorm::new(store, "decoder.norm", d)?,
            head: Linear::new(store, rng, "head", d, cfg.action_dim, Init::FanIn)?,
            horizon: cfg.horizon,
            action_dim: cfg.action_dim,
        })
    }

    /// Encoder output over the condition tokens, `[B, T_o + 1, d]`.
    pub fn encode<F: Scalar>(&self, g: &mut Graph<'_, F>, obs: Var, t: &[usize]) -> Result<Var> {
        let mut h = condition_tokens(g, &self.time, &self.obs, obs, t)?;
        for block in &self.encoder {
            h = block.forward(g, h)?;
        }
        self.enc_norm.forward(g, h)
    }

    /// Action tokens with positional embedding, `[B, T_p, d]`.
    pub fn embed_actions<F: Scalar>(&self, g: &mut Graph<'_, F>, x_t: Var) -> Result<Var> {
        let s = g.shape(x_t);
        if s.len() != 3 || s[1] != self.horizon || s[2] != self.action_dim {
            return Err(Error::Shape {
                op: "MTDP action input",
                lhs: vec![0, self.horizon, self.action_dim],
                rhs: s.to_vec(),
            });
        }
        let h = self.action_in.forward(g, x_t)?;
        let p = g.param(self.pos);
        g.add(h, p)
    }

    /// Final norm and linear head, `[B, T_p, D_a]`.
    pub fn project<F: Scalar>(&self, g: &mut Graph<'_, F>, h: Var) -> Result<Var> {
        let h = self.out_norm.forward(g, h)?;
        self.head.forward(g, h)
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x_t: Var, obs: Var, t: &[usize]) -> Result<Var> {
        let enc = self.encode(g, obs, t)?;
        let cond = pool_condition(g, enc)?;
        let mut h = self.embed_actions(g, x_t)?;
        for block in &self.decoder {
            h = block.forward(g, h, Some(enc), cond)?;
        }
        self.project(g, h)
    }
}
