//! Parameterised layers on top of the tape.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(−1/√fan_in, 1/√fan_in)`.
    FanIn,
    Zero,
    Normal(f64),
}

pub fn init_tensor<F: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, init: Init, rng: &mut R) -> Tensor<F> {
    match init {
        Init::Zero => Tensor::zeros(shape),
        Init::FanIn => {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            Tensor::from_fn(shape, |_| F::from_f64(dist.sample(rng)))
        }
        Init::Normal(std) => {
            let dist = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(shape, |_| F::from_f64(dist.sample(rng)))
        }
    }
}

/// `y = x·W + b` over the last axis; `W` is stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
    ) -> Result<Self> {
        let w = init_tensor(&[in_dim, out_dim], in_dim, init, rng);
        let b = match init {
            Init::FanIn => init_tensor(&[out_dim], in_dim, init, rng),
            _ => Tensor::zeros(&[out_dim]),
        };
        Ok(Self {
            weight: store.register(format!("{name}.weight"), w)?,
            bias: store.register(format!("{name}.bias"), b)?,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

/// Layer norm over the last axis with learned gain and offset.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.register(format!("{name}.weight"), Tensor::full(&[dim], F::one()))?,
            offset: store.register(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let n = g.layer_norm(x)?;
        let w = g.param(self.gain);
        let b = g.param(self.offset);
        let y = g.mul(n, w)?;
        g.add(y, b)
    }
}

/// Two linear layers with a GELU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), in_dim, hidden, Init::FanIn)?,
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, out_dim, Init::FanIn)?,
        })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Channels-last 1-D convolution, "same" padding, odd kernel.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel;
        Ok(Self {
            weight: store.register(
                format!("{name}.weight"),
                init_tensor(&[kernel, in_ch, out_ch], fan_in, Init::FanIn, rng),
            )?,
            bias: store.register(format!("{name}.bias"), init_tensor(&[out_ch], fan_in, Init::FanIn, rng))?,
        })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv1d(x, w, b)
    }
}
