//! Forward noising and the two reverse recursions.
//!
//! DDPM step (ancestral, ε-parameterised):
//! `x_{t−1} = (x_t − (1−α_t)/√(1−ᾱ_t) · ε̂) / √α_t + σ_t z`, with `z = 0` at `t = 1`.
//!
//! DDIM step (η = 0, deterministic), from `t` to any earlier `t'`:
//! `x̂₀ = (x_t − √(1−ᾱ_t) ε̂)/√ᾱ_t`, `x_{t'} = √ᾱ_{t'} x̂₀ + √(1−ᾱ_{t'}) ε̂`, with `ᾱ_0 = 1`.
//!
//! A variant of the DDPM update that multiplies by `√α_t` instead of dividing,
//! and a DDIM update written with per-step `α` in place of the cumulative `ᾱ`,
//! circulate in the literature. Neither inverts the forward marginal, so both
//! are deliberately not implemented; the standard forms above are.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Scalar, Tensor};
use crate::diffusion::{DiffusionConfig, NoiseSchedule, SamplerKind};
use crate::error::{Error, Result};

/// Noise-prediction model `ε̂ = ε_θ(x_t, c, t)` with the condition already bound.
pub trait Denoiser<F: Scalar> {
    /// `x_t` is `[B, T_p, D_a]`; the returned noise estimate has the same shape.
    fn predict_noise(&self, x_t: &Tensor<F>, t: usize) -> Result<Tensor<F>>;
}

impl<F: Scalar, D: Denoiser<F> + ?Sized> Denoiser<F> for &D {
    fn predict_noise(&self, x_t: &Tensor<F>, t: usize) -> Result<Tensor<F>> {
        (**self).predict_noise(x_t, t)
    }
}

fn same_len<F>(op: &'static str, a: &[F], b: &[F]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op,
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    Ok(())
}

/// Draw from `q(x_t | x_0) = N(√ᾱ_t x_0, (1−ᾱ_t) I)` given the standard-normal `eps`.
pub fn q_sample<F: Scalar>(x0: &[F], t: usize, eps: &[F], sched: &NoiseSchedule) -> Result<Vec<F>> {
    same_len("q_sample", x0, eps)?;
    let ab = sched.alpha_bar(t)?;
    sched.check(t)?;
    let (a, b) = (F::from_f64(ab.sqrt()), F::from_f64((1.0 - ab).sqrt()));
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// One DDPM reverse step with caller-supplied standard-normal `z`
/// (ignored at `t = 1`, where `σ_1 = 0`).
pub fn ddpm_step_with_noise<F: Scalar>(
    x_t: &[F],
    eps_hat: &[F],
    t: usize,
    sched: &NoiseSchedule,
    z: &[F],
) -> Result<Vec<F>> {
    same_len("ddpm_step", x_t, eps_hat)?;
    same_len("ddpm_step noise", x_t, z)?;
    let alpha = sched.alpha(t)?;
    let ab = sched.alpha_bar(t)?;
    let sigma = if t > 1 { sched.sigma(t)? } else { 0.0 };
    let inv_sqrt_alpha = F::from_f64(1.0 / alpha.sqrt());
    let eps_coef = F::from_f64((1.0 - alpha) / (1.0 - ab).sqrt());
    let sig = F::from_f64(sigma);
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .zip(z)
        .map(|((&x, &e), &n)| inv_sqrt_alpha * (x - eps_coef * e) + sig * n)
        .collect())
}

/// One DDPM reverse step `x_t → x_{t−1}`, drawing `z ~ N(0, I)` from `rng` for `t > 1`.
pub fn ddpm_step<F: Scalar, R: Rng + ?Sized>(
    x_t: &[F],
    eps_hat: &[F],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<F>> {
    sched.check(t)?;
    let z: Vec<F> = if t > 1 {
        standard_normal(x_t.len(), rng)
    } else {
        vec![F::zero(); x_t.len()]
    };
    ddpm_step_with_noise(x_t, eps_hat, t, sched, &z)
}

/// One deterministic DDIM step `x_t → x_{t_prev}`; `t_prev = 0` yields the final sample.
pub fn ddim_step<F: Scalar>(
    x_t: &[F],
    eps_hat: &[F],
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<F>> {
    same_len("ddim_step", x_t, eps_hat)?;
    if t_prev >= t {
        return Err(Error::Config(format!("ddim step must go backwards: {t} -> {t_prev}")));
    }
    let ab = sched.alpha_bar(t)?;
    sched.check(t)?;
    let ab_prev = sched.alpha_bar(t_prev)?;
    let (sa, sb) = (F::from_f64(ab.sqrt()), F::from_f64((1.0 - ab).sqrt()));
    let (pa, pb) = (F::from_f64(ab_prev.sqrt()), F::from_f64((1.0 - ab_prev).sqrt()));
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .map(|(&x, &e)| {
            let x0 = (x - sb * e) / sa;
            pa * x0 + pb * e
        })
        .collect())
}

/// Uniform-stride, round-to-nearest `(t, t_prev)` pairs from `t_train` down to 0.
pub fn make_subsequence(t_train: usize, t_sample: usize) -> Result<Vec<(usize, usize)>> {
    if t_train < 1 || t_sample < 1 || t_sample > t_train {
        return Err(Error::Config(format!(
            "sampling steps {t_sample} must lie in 1..={t_train}"
        )));
    }
    // round(t_train * k / t_sample), half-up, in integer arithmetic
    let at = |k: usize| (2 * t_train * k + t_sample) / (2 * t_sample);
    Ok((0..t_sample)
        .map(|i| (at(t_sample - i), at(t_sample - i - 1)))
        .collect())
}

pub fn standard_normal<F: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<F> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            F::from_f64(v)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SampleOutput<F> {
    /// Denoised trajectories in normalized units, `[B, T_p, D_a]`.
    pub trajectory: Tensor<F>,
    /// Noise-network evaluations per trajectory.
    pub network_evals: usize,
}

/// Runs the reverse process from `x_T ~ N(0, I)`. Trajectory `b` of the batch
/// draws all of its randomness from `rngs[b]`, so results do not depend on
/// how trajectories are grouped into batches.
pub fn sample<F, D, R>(
    model: &D,
    shape: &[usize],
    config: &DiffusionConfig,
    sched: &NoiseSchedule,
    rngs: &mut [R],
) -> Result<SampleOutput<F>>
where
    F: Scalar,
    D: Denoiser<F> + ?Sized,
    R: Rng,
{
    config.validate()?;
    if sched.t_train() != config.t_train {
        return Err(Error::Config(format!(
            "schedule has {} steps, config expects {}",
            sched.t_train(),
            config.t_train
        )));
    }
    let [batch, ..] = shape else {
        return Err(Error::Empty("sample shape"));
    };
    if *batch != rngs.len() {
        return Err(Error::Config(format!("{} rng streams for batch {batch}", rngs.len())));
    }
    let per = shape[1..].iter().product::<usize>();
    let mut x: Vec<F> = Vec::with_capacity(batch * per);
    for rng in rngs.iter_mut() {
        x.extend(standard_normal::<F, _>(per, rng));
    }
    let steps: Vec<(usize, usize)> = match config.sampler {
        SamplerKind::Ddpm => (1..=config.t_train).rev().map(|t| (t, t - 1)).collect(),
        SamplerKind::Ddim => make_subsequence(config.t_train, config.t_sample)?,
    };
    let mut evals = 0;
    for (step, &(t, t_prev)) in steps.iter().enumerate() {
        let xt = Tensor::new(shape.to_vec(), x)?;
        let eps = model.predict_noise(&xt, t)?;
        evals += 1;
        if eps.shape() != shape {
            return Err(Error::Shape {
                op: "denoiser output",
                lhs: shape.to_vec(),
                rhs: eps.shape().to_vec(),
            });
        }
        let xt = xt.into_data();
        x = match config.sampler {
            SamplerKind::Ddpm => {
                let mut next = Vec::with_capacity(xt.len());
                for (b, rng) in rngs.iter_mut().enumerate() {
                    let r = b * per..(b + 1) * per;
                    next.extend(ddpm_step(&xt[r.clone()], &eps.data()[r], t, sched, rng)?);
                }
                next
            }
            SamplerKind::Ddim => ddim_step(&xt, eps.data(), t, t_prev, sched)?,
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DenoiseNonFinite { step, t });
        }
    }
    Ok(SampleOutput {
        trajectory: Tensor::new(shape.to_vec(), x)?,
        network_evals: evals,
    })
}
