use rand::Rng;

use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::diffusion::{q_sample, standard_normal, NoiseSchedule};
use crate::error::{Error, Result};

/// A noise-prediction network evaluated on the tape.
pub trait NoisePredictor {
    /// `x_t`: `[B, T_p, D_a]`, `obs`: `[B, T_o, D_o]`, one timestep per batch row.
    /// Returns `ε̂` with the shape of `x_t`.
    fn predict<F: Scalar>(&self, g: &mut Graph<'_, F>, x_t: Var, obs: Var, t: &[usize]) -> Result<Var>;
}

/// A noisy training batch: timesteps, the injected noise and `x_t`.
#[derive(Clone, Debug)]
pub struct NoisedBatch<F> {
    pub t: Vec<usize>,
    pub eps: Tensor<F>,
    pub x_t: Tensor<F>,
}

/// Draws `t ~ U{1..T}` and `ε ~ N(0, I)` per batch row and noises `actions`.
pub fn noise_batch<F: Scalar, R: Rng + ?Sized>(
    actions: &Tensor<F>,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<NoisedBatch<F>> {
    let shape = actions.shape().to_vec();
    let Some(&batch) = shape.first() else {
        return Err(Error::Empty("training batch"));
    };
    if batch == 0 {
        return Err(Error::Empty("training batch"));
    }
    let per = actions.len() / batch;
    let mut t = Vec::with_capacity(batch);
    let mut eps = Vec::with_capacity(actions.len());
    let mut x_t = Vec::with_capacity(actions.len());
    for row in actions.data().chunks(per) {
        let tb = rng.random_range(1..=sched.t_train());
        let e: Vec<F> = standard_normal(per, rng);
        x_t.extend(q_sample(row, tb, &e, sched)?);
        eps.extend(e);
        t.push(tb);
    }
    Ok(NoisedBatch {
        t,
        eps: Tensor::new(shape.clone(), eps)?,
        x_t: Tensor::new(shape, x_t)?,
    })
}

/// Mean squared error between the injected noise and the model's estimate,
/// averaged over batch and coordinates.
pub fn training_loss<F, M, R>(
    g: &mut Graph<'_, F>,
    model: &M,
    sched: &NoiseSchedule,
    obs: &Tensor<F>,
    actions: &Tensor<F>,
    rng: &mut R,
) -> Result<Var>
where
    F: Scalar,
    M: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    if obs.shape().first() != actions.shape().first() {
        return Err(Error::Shape {
            op: "training_loss batch",
            lhs: obs.shape().to_vec(),
            rhs: actions.shape().to_vec(),
        });
    }
    let batch = noise_batch(actions, sched, rng)?;
    noise_loss(g, model, obs, &batch)
}

/// Loss for an already-noised batch.
pub fn noise_loss<F, M>(g: &mut Graph<'_, F>, model: &M, obs: &Tensor<F>, batch: &NoisedBatch<F>) -> Result<Var>
where
    F: Scalar,
    M: NoisePredictor + ?Sized,
{
    let x = g.constant(batch.x_t.clone());
    let o = g.constant(obs.clone());
    let eps_hat = model.predict(g, x, o, &batch.t)?;
    if g.shape(eps_hat) != batch.eps.shape() {
        return Err(Error::Shape {
            op: "noise prediction",
            lhs: batch.eps.shape().to_vec(),
            rhs: g.shape(eps_hat).to_vec(),
        });
    }
    let eps = g.constant(batch.eps.clone());
    let diff = g.sub(eps_hat, eps)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean_all(sq))
}
