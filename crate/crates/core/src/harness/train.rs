use rand::seq::SliceRandom;

use crate::autodiff::{Graph, Tensor};
use crate::diffusion::{noise_batch, noise_loss, NoiseSchedule};
use crate::envs::{make_windows, Dataset, Windows};
use crate::error::{Error, Result};
use crate::harness::{cosine_lr, AdamW, RunConfig};
use crate::policy::Policy;
use crate::rng::substream;

/// Batches used to measure the loss before and after training.
const PROBE_BATCHES: usize = 8;

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub policy: Policy,
    /// Mean minibatch loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss of the initial and final weights on the same fixed noised batches.
    pub initial_loss: f64,
    pub final_loss: f64,
}

struct Batches {
    obs: Vec<f32>,
    actions: Vec<f32>,
    obs_row: usize,
    act_row: usize,
    obs_shape: [usize; 2],
    act_shape: [usize; 2],
}

impl Batches {
    fn new(w: &Windows, cfg: &RunConfig) -> Result<Self> {
        let (o, a) = w.normalized()?;
        let p = &cfg.policy;
        Ok(Self {
            obs: o.into_iter().map(|v| v as f32).collect(),
            actions: a.into_iter().map(|v| v as f32).collect(),
            obs_row: p.obs_horizon * p.obs_dim,
            act_row: p.horizon * p.action_dim,
            obs_shape: [p.obs_horizon, p.obs_dim],
            act_shape: [p.horizon, p.action_dim],
        })
    }

    fn gather(&self, idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut o = Vec::with_capacity(idx.len() * self.obs_row);
        let mut a = Vec::with_capacity(idx.len() * self.act_row);
        for &i in idx {
            o.extend_from_slice(&self.obs[i * self.obs_row..(i + 1) * self.obs_row]);
            a.extend_from_slice(&self.actions[i * self.act_row..(i + 1) * self.act_row]);
        }
        let b = idx.len();
        Ok((
            Tensor::new(vec![b, self.obs_shape[0], self.obs_shape[1]], o)?,
            Tensor::new(vec![b, self.act_shape[0], self.act_shape[1]], a)?,
        ))
    }
}

fn probe_loss(policy: &Policy, data: &Batches, n: usize, cfg: &RunConfig, sched: &NoiseSchedule) -> Result<f64> {
    let mut rng = substream(cfg.seed, "probe", 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut total = 0.0;
    let chunks: Vec<&[usize]> = order.chunks(cfg.optim.batch_size).take(PROBE_BATCHES).collect();
    for idx in &chunks {
        let (obs, act) = data.gather(idx)?;
        let batch = noise_batch(&act, sched, &mut rng)?;
        let mut g = Graph::inference(&policy.store);
        let l = noise_loss(&mut g, &policy.net, &obs, &batch)?;
        total += g.value(l).item() as f64;
    }
    Ok(total / chunks.len() as f64)
}

/// Fits a fresh policy to the dataset's windows. Deterministic in `cfg`.
/// With zero epochs the returned weights are the initialization.
pub fn train(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainOutput> {
    cfg.validate()?;
    let p = &cfg.policy;
    let windows = make_windows(dataset, p.obs_horizon, p.horizon)?;
    let n = windows.len();
    let data = Batches::new(&windows, cfg)?;
    let mut policy = Policy::new(
        p.clone(),
        cfg.diffusion.clone(),
        windows.stats.clone(),
        &mut substream(cfg.seed, "init", 0),
    )?;
    let sched = policy.schedule()?;
    let initial_loss = probe_loss(&policy, &data, n, cfg, &sched)?;

    let bs = cfg.optim.batch_size;
    let steps_per_epoch = n.div_ceil(bs);
    let total = steps_per_epoch * cfg.optim.epochs;
    let mut opt = AdamW::new(&policy.store, &cfg.optim);
    let mut epoch_losses = Vec::with_capacity(cfg.optim.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.optim.epochs {
        order.shuffle(&mut substream(cfg.seed, "data-shuffle", epoch as u64));
        let mut noise = substream(cfg.seed, "noise", epoch as u64);
        let mut sum = 0.0;
        for (step, idx) in order.chunks(bs).enumerate() {
            let (obs, act) = data.gather(idx)?;
            let batch = noise_batch(&act, &sched, &mut noise)?;
            let grads = {
                let mut g = Graph::new(&policy.store);
                let loss = noise_loss(&mut g, &policy.net, &obs, &batch)?;
                let v = g.value(loss).item();
                if !v.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                sum += v as f64;
                g.backward(loss)?
            };
            let lr = cosine_lr(cfg.optim.lr, opt.steps() as usize, total);
            opt.step(&mut policy.store, &grads, lr);
        }
        epoch_losses.push(sum / steps_per_epoch as f64);
    }
    let final_loss = probe_loss(&policy, &data, n, cfg, &sched)?;
    Ok(TrainOutput {
        policy,
        epoch_losses,
        initial_loss,
        final_loss,
    })
}
