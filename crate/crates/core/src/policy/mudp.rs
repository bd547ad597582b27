use rand::Rng;

use crate::attention::{pool_condition, BlockVariant, DecoderBlock};
use crate::autodiff::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Init, LayerNorm, Linear};
use crate::policy::embedding::{condition_tokens, ObsEncoder, TimestepEmbedding};
use crate::policy::PolicyConfig;

/// Residual block of two convolutions whose first activation is FiLM-modulated
/// by the global condition vector: `h ← (1 + scale) ⊙ h + bias` per channel.
/// Layout is channels-last, `[B, L, C]`.
#[derive(Clone, Debug)]
pub struct FilmResBlock {
    pub conv1: Conv1d,
    pub norm1: LayerNorm,
    pub film: Linear,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
    /// 1×1 convolution on the skip path when the width changes.
    pub skip: Option<Conv1d>,
    pub out_ch: usize,
}

impl FilmResBlock {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        d_cond: usize,
        kernel: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv1d::new(store, rng, &format!("{name}.conv1"), in_ch, out_ch, kernel)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), out_ch)?,
            film: Linear::new(store, rng, &format!("{name}.film"), d_cond, 2 * out_ch, Init::FanIn)?,
            conv2: Conv1d::new(store, rng, &format!("{name}.conv2"), out_ch, out_ch, kernel)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), out_ch)?,
            skip: (in_ch != out_ch)
                .then(|| Conv1d::new(store, rng, &format!("{name}.skip"), in_ch, out_ch, 1))
                .transpose()?,
            out_ch,
        })
    }

    /// `x`: `[B, L, C_in]`, `cond`: `[B, d_cond]`.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var, cond: Var) -> Result<Var> {
        let b = g.shape(x)[0];
        let h = self.conv1.forward(g, x)?;
        let h = self.norm1.forward(g, h)?;
        let h = g.gelu(h);
        let c = g.gelu(cond);
        let fb = self.film.forward(g, c)?;
        let fb = g.reshape(fb, &[b, 1, 2 * self.out_ch])?;
        let scale = g.slice(fb, 2, 0, self.out_ch)?;
        let bias = g.slice(fb, 2, self.out_ch, self.out_ch)?;
        let s1 = g.add_scalar(scale, 1.0);
        let h = g.mul(h, s1)?;
        let h = g.add(h, bias)?;
        let h = self.conv2.forward(g, h)?;
        let h = self.norm2.forward(g, h)?;
        let h = g.gelu(h);
        let r = match &self.skip {
            Some(conv) => conv.forward(g, x)?,
            None => x,
        };
        g.add(h, r)
    }
}

/// One UNet stage: a FiLM residual block followed by a modulated attention
/// block over the stage's time positions.
#[derive(Clone, Debug)]
pub struct Stage {
    pub res: FilmResBlock,
    pub attn: DecoderBlock,
}

impl Stage {
    #[allow(clippy::too_many_arguments)]
    fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        d_film: usize,
        cfg: &PolicyConfig,
    ) -> Result<Self> {
        Ok(Self {
            res: FilmResBlock::new(
                store,
                rng,
                &format!("{name}.res"),
                in_ch,
                out_ch,
                d_film,
                cfg.kernel_size,
            )?,
            attn: DecoderBlock::new(
                store,
                rng,
                &format!("{name}.attn"),
                BlockVariant::DitSelfAttention,
                out_ch,
                cfg.d_model,
                cfg.n_heads,
                cfg.ffn_mult,
            )?,
        })
    }

    fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var, film: Var, pooled: Var, attention: bool) -> Result<Var> {
        let h = self.res.forward(g, x, film)?;
        if attention {
            self.attn.forward(g, h, None, pooled)
        } else {
            Ok(h)
        }
    }
}

/// Temporal UNet noise predictor over the action sequence.
#[derive(Clone, Debug)]
pub struct Mudp {
    pub time: TimestepEmbedding,
    pub obs: ObsEncoder,
    pub down: Vec<Stage>,
    pub mid: FilmResBlock,
    pub up: Vec<Stage>,
    pub out: Conv1d,
    horizon: usize,
    action_dim: usize,
}

impl Mudp {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, rng: &mut R, cfg: &PolicyConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let d_film = d * (cfg.obs_horizon + 1);
        let time = TimestepEmbedding::new(store, rng, "time", d, d)?;
        let obs = ObsEncoder::new(store, rng, "obs", cfg.obs_dim, d)?;
        let ch = &cfg.unet_channels;
        let mut down = Vec::with_capacity(ch.len());
        let mut prev = cfg.action_dim;
        for (i, &c) in ch.iter().enumerate() {
            down.push(Stage::new(store, rng, &format!("down.{i}"), prev, c, d_film, cfg)?);
            prev = c;
        }
        let last = *ch.last().expect("validated nonempty");
        let mid = FilmResBlock::new(store, rng, "mid", last, last, d_film, cfg.kernel_size)?;
        let mut up = Vec::with_capacity(ch.len() - 1);
        for i in (0..ch.len() - 1).rev() {
            up.push(Stage::new(
                store,
                rng,
                &format!("up.{i}"),
                ch[i + 1] + ch[i],
                ch[i],
                d_film,
                cfg,
            )?);
        }
        let out = Conv1d::new(store, rng, "out", ch[0], cfg.action_dim, cfg.kernel_size)?;
        Ok(Self {
            time,
            obs,
            down,
            mid,
            up,
            out,
            horizon: cfg.horizon,
            action_dim: cfg.action_dim,
        })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x_t: Var, obs: Var, t: &[usize]) -> Result<Var> {
        self.forward_with(g, x_t, obs, t, true)
    }

    /// With `attention = false` the modulated attention inserts are skipped,
    /// leaving the plain FiLM-conditioned convolutional UNet.
    pub fn forward_with<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        x_t: Var,
        obs: Var,
        t: &[usize],
        attention: bool,
    ) -> Result<Var> {
        let s = g.shape(x_t).to_vec();
        if s.len() != 3 || s[1] != self.horizon || s[2] != self.action_dim {
            return Err(Error::Shape {
                op: "MUDP action input",
                lhs: vec![0, self.horizon, self.action_dim],
                rhs: s,
            });
        }
        let b = s[0];
        let tokens = condition_tokens(g, &self.time, &self.obs, obs, t)?;
        let pooled = pool_condition(g, tokens)?;
        let n = g.shape(tokens)[1] * g.shape(tokens)[2];
        let film = g.reshape(tokens, &[b, n])?;

        let mut h = x_t;
        let mut skips = Vec::with_capacity(self.down.len());
        for (i, stage) in self.down.iter().enumerate() {
            h = stage.forward(g, h, film, pooled, attention)?;
            if i + 1 < self.down.len() {
                skips.push(h);
                h = downsample(g, h)?;
            }
        }
        h = self.mid.forward(g, h, film)?;
        for stage in &self.up {
            h = upsample(g, h)?;
            let skip = skips.pop().expect("one skip per up stage");
            h = g.concat(&[h, skip], 2)?;
            h = stage.forward(g, h, film, pooled, attention)?;
        }
        self.out.forward(g, h)
    }
}

/// Halves the time axis by averaging adjacent pairs.
pub fn downsample<F: Scalar>(g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if !s[1].is_multiple_of(2) {
        return Err(Error::Shape {
            op: "downsample",
            lhs: s,
            rhs: vec![],
        });
    }
    let r = g.reshape(x, &[s[0], s[1] / 2, 2, s[2]])?;
    g.mean(r, 2)
}

/// Doubles the time axis by repeating every position.
pub fn upsample<F: Scalar>(g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let r = g.reshape(x, &[s[0], s[1], 1, s[2]])?;
    let z = g.constant(Tensor::zeros(&[1, 1, 2, 1]));
    let r = g.add(r, z)?;
    g.reshape(r, &[s[0], 2 * s[1], s[2]])
}
