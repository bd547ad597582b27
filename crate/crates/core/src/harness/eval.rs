use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::diffusion::DiffusionConfig;
use crate::envs::{expert_action, Env, Mode, Task, Vec2, OBSTACLE_CENTER};
use crate::error::{Error, Result};
use crate::policy::{Plan, Policy};
use crate::rng::substream;

/// Anything that maps observation windows to action chunks.
pub trait Controller {
    fn obs_horizon(&self) -> usize;
    /// Actions executed from each chunk before replanning.
    fn action_horizon(&self) -> usize;
    /// `obs`: `[B, T_o, 2]` in world units; `rngs[b]` is row `b`'s stream.
    fn plan(&self, obs: &Tensor<f64>, rngs: &mut [ChaCha8Rng]) -> Result<Plan>;
}

impl Controller for Policy {
    fn obs_horizon(&self) -> usize {
        self.config.obs_horizon
    }
    fn action_horizon(&self) -> usize {
        self.config.action_horizon
    }
    fn plan(&self, obs: &Tensor<f64>, rngs: &mut [ChaCha8Rng]) -> Result<Plan> {
        Policy::plan(self, obs, rngs)
    }
}

/// A policy evaluated with a sampler other than its own.
pub struct WithSampler<'a> {
    pub policy: &'a Policy,
    pub diffusion: DiffusionConfig,
}

impl Controller for WithSampler<'_> {
    fn obs_horizon(&self) -> usize {
        self.policy.config.obs_horizon
    }
    fn action_horizon(&self) -> usize {
        self.policy.config.action_horizon
    }
    fn plan(&self, obs: &Tensor<f64>, rngs: &mut [ChaCha8Rng]) -> Result<Plan> {
        self.policy.plan_with(&self.diffusion, obs, rngs)
    }
}

/// The scripted expert behind the controller interface. On the avoid task
/// it keeps to the side of the obstacle it is already on.
pub struct ExpertController {
    pub task: Task,
    pub horizon: usize,
    pub action_horizon: usize,
}

impl Controller for ExpertController {
    fn obs_horizon(&self) -> usize {
        1
    }
    fn action_horizon(&self) -> usize {
        self.action_horizon
    }
    fn plan(&self, obs: &Tensor<f64>, _rngs: &mut [ChaCha8Rng]) -> Result<Plan> {
        let b = obs.shape()[0];
        let per = obs.len() / b.max(1);
        let mut out = Vec::with_capacity(b * self.horizon * 2);
        for row in obs.data().chunks(per) {
            let pos = [row[per - 2], row[per - 1]];
            let mode = if pos[1] >= OBSTACLE_CENTER[1] {
                Mode::Left
            } else {
                Mode::Right
            };
            let mut env = Env::new(self.task, pos);
            for _ in 0..self.horizon {
                let a = expert_action(&env, mode);
                out.extend_from_slice(&a);
                env.step(a);
            }
        }
        Ok(Plan {
            actions: Tensor::new(vec![b, self.horizon, 2], out)?,
            network_evals: 0,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub left: usize,
    pub right: usize,
    /// Episodes that never crossed the obstacle's center line.
    pub none: usize,
}

/// Deterministic evaluation results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub task: Task,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub success_per_seed: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
    /// Noise-network evaluations per sampled trajectory.
    pub network_evals_per_trajectory: usize,
    pub mode_counts: Option<ModeCounts>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalTiming {
    pub sampling_calls: usize,
    pub trajectories: usize,
    pub total_seconds: f64,
    pub seconds_per_call: f64,
    pub seconds_per_trajectory: f64,
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub summary: EvalSummary,
    pub timing: EvalTiming,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

struct Rollouts {
    envs: Vec<Env>,
    history: Vec<VecDeque<Vec2>>,
}

/// Receding-horizon rollouts of `episodes` episodes for every seed. Episode
/// `i` of seed `s` takes its start state and its sampling noise from
/// dedicated streams of `s`, and all live episodes are planned together.
pub fn evaluate<C: Controller + ?Sized>(ctrl: &C, task: Task, episodes: usize, seeds: &[u64]) -> Result<EvalOutput> {
    if episodes == 0 || seeds.is_empty() {
        return Err(Error::Config(
            "evaluation needs at least one episode and one seed".into(),
        ));
    }
    let t_o = ctrl.obs_horizon();
    let t_a = ctrl.action_horizon();
    let mut timing = EvalTiming::default();
    let mut elapsed = Duration::ZERO;
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut modes = ModeCounts::default();
    let mut evals: Option<usize> = None;
    for &seed in seeds {
        let mut r = Rollouts {
            envs: (0..episodes as u64)
                .map(|i| Env::reset(task, &mut substream(seed, "eval-episode", i)))
                .collect(),
            history: Vec::new(),
        };
        r.history = r.envs.iter().map(|e| VecDeque::from(vec![e.pos; t_o])).collect();
        let mut rngs: Vec<ChaCha8Rng> = (0..episodes as u64).map(|i| substream(seed, "eval-noise", i)).collect();
        loop {
            let live: Vec<usize> = (0..episodes).filter(|&i| !r.envs[i].finished()).collect();
            if live.is_empty() {
                break;
            }
            let mut obs = Vec::with_capacity(live.len() * t_o * 2);
            for &i in &live {
                for p in &r.history[i] {
                    obs.extend_from_slice(p);
                }
            }
            let obs = Tensor::new(vec![live.len(), t_o, 2], obs)?;
            let mut batch_rngs: Vec<ChaCha8Rng> = live.iter().map(|&i| rngs[i].clone()).collect();
            let start = Instant::now();
            let plan = ctrl.plan(&obs, &mut batch_rngs)?;
            elapsed += start.elapsed();
            timing.sampling_calls += 1;
            timing.trajectories += live.len();
            match evals {
                None => evals = Some(plan.network_evals),
                Some(e) if e != plan.network_evals => {
                    return Err(Error::Config("network evaluations changed between calls".into()))
                }
                _ => {}
            }
            let horizon = plan.actions.shape()[1];
            for (k, &i) in live.iter().enumerate() {
                rngs[i] = batch_rngs[k].clone();
                let chunk = &plan.actions.data()[k * horizon * 2..(k + 1) * horizon * 2];
                for a in chunk.chunks(2).take(t_a) {
                    let env = &mut r.envs[i];
                    if env.finished() {
                        break;
                    }
                    env.step([a[0], a[1]]);
                    let h = &mut r.history[i];
                    h.pop_front();
                    h.push_back(env.pos);
                }
            }
        }
        let ok = r.envs.iter().filter(|e| e.success()).count();
        per_seed.push(ok as f64 / episodes as f64);
        for e in &r.envs {
            match e.crossing {
                Some(Mode::Left) => modes.left += 1,
                Some(Mode::Right) => modes.right += 1,
                None => modes.none += 1,
            }
        }
    }
    timing.total_seconds = elapsed.as_secs_f64();
    timing.seconds_per_call = timing.total_seconds / timing.sampling_calls.max(1) as f64;
    timing.seconds_per_trajectory = timing.total_seconds / timing.trajectories.max(1) as f64;
    let (mean, std) = mean_std(&per_seed);
    Ok(EvalOutput {
        summary: EvalSummary {
            task,
            episodes,
            seeds: seeds.to_vec(),
            success_per_seed: per_seed,
            mean,
            std,
            network_evals_per_trajectory: evals.unwrap_or(0),
            mode_counts: (task == Task::Avoid).then_some(modes),
        },
        timing,
    })
}
