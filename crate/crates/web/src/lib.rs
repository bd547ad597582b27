//! WebAssembly bindings for the browser demo. The sampling demo replaces the
//! learned network with the exact denoiser of a small set of expert paths, so
//! it runs instantly and shows the sampler's behaviour on a bimodal target.

use wasm_bindgen::prelude::*;

use mtdp::diffusion::{
    q_sample, sample, standard_normal, DiffusionConfig, EmpiricalDenoiser, NoiseSchedule, ScheduleKind,
};
use mtdp::envs::{expert_action, Env, Mode, Task, Vec2, OBSTACLE_CENTER};
#[cfg(test)]
use mtdp::envs::{GOAL, GOAL_RADIUS};
use mtdp::rng::substream;

/// Waypoints per path.
pub const POINTS: usize = 16;
/// Diffusion steps used for noising and sampling.
pub const T_TRAIN: usize = 100;
const JITTER: [f64; 3] = [-0.02, 0.0, 0.02];

fn err(e: mtdp::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `ᾱ_1..ᾱ_T` for `kind` ("cosine" or "linear").
pub fn alpha_bars(kind: &str, t_train: usize) -> mtdp::Result<Vec<f64>> {
    Ok(NoiseSchedule::new(kind.parse()?, t_train)?.alpha_bars().to_vec())
}

/// Expert rollout from `start` in `mode`, resampled by arc length to
/// `POINTS` positions and flattened as `x0, y0, x1, y1, ...`.
pub fn expert_path(start: Vec2, mode: Mode) -> Vec<f64> {
    let mut env = Env::new(Task::Avoid, start);
    let mut pts = vec![env.pos];
    while !env.finished() {
        env.step(expert_action(&env, mode));
        pts.push(env.pos);
    }
    resample(&pts, POINTS)
}

fn resample(pts: &[Vec2], n: usize) -> Vec<f64> {
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(2 * n);
    let mut seg = 0;
    for k in 0..n {
        let s = if n > 1 { total * k as f64 / (n - 1) as f64 } else { 0.0 };
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let (a, b) = (pts[seg], pts[(seg + 1).min(pts.len() - 1)]);
        let len = cum.get(seg + 1).map_or(0.0, |c| c - cum[seg]);
        let u = if len > 0.0 {
            ((s - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(a[0] + u * (b[0] - a[0]));
        out.push(a[1] + u * (b[1] - a[1]));
    }
    out
}

fn to_unit(world: &[f64]) -> Vec<f64> {
    world.iter().map(|v| 2.0 * v - 1.0).collect()
}

fn to_world(unit: &[f64]) -> Vec<f64> {
    unit.iter().map(|v| (v + 1.0) / 2.0).collect()
}

/// Expert paths for both modes from starts jittered around `start`.
pub fn expert_set(start: Vec2) -> Vec<Vec<f64>> {
    let mut set = Vec::new();
    for mode in [Mode::Left, Mode::Right] {
        for dx in JITTER {
            for dy in JITTER {
                set.push(expert_path([start[0] + dx, start[1] + dy], mode));
            }
        }
    }
    set
}

/// The above-obstacle expert path from `start` after forward noising to step `t`.
pub fn noised_path(start: Vec2, t: usize, seed: u64) -> mtdp::Result<Vec<f64>> {
    let sched = NoiseSchedule::new(ScheduleKind::Cosine, T_TRAIN)?;
    let x0 = to_unit(&expert_path(start, Mode::Left));
    let eps: Vec<f64> = standard_normal(x0.len(), &mut substream(seed, "web-noise", 0));
    Ok(to_world(&q_sample(&x0, t, &eps, &sched)?))
}

/// Draws `n` paths from `start` with DDPM (`steps` ignored) or DDIM at `steps`.
pub fn sample_paths(start: Vec2, sampler: &str, steps: usize, n: usize, seed: u64) -> mtdp::Result<Vec<f64>> {
    let sched = NoiseSchedule::new(ScheduleKind::Cosine, T_TRAIN)?;
    let data = expert_set(start).iter().map(|p| to_unit(p)).collect();
    let model = EmpiricalDenoiser::new(data, sched.clone())?;
    let cfg = match sampler {
        "ddpm" => DiffusionConfig::ddpm(T_TRAIN),
        "ddim" => DiffusionConfig::ddim(T_TRAIN, steps),
        other => return Err(mtdp::Error::Config(format!("unknown sampler {other}"))),
    };
    let mut rngs: Vec<_> = (0..n as u64).map(|i| substream(seed, "web-sample", i)).collect();
    let out = sample::<f64, _, _>(&model, &[n, POINTS, 2], &cfg, &sched, &mut rngs)?;
    Ok(to_world(out.trajectory.data()))
}

/// Side of the obstacle where a flattened world-space path first crosses
/// its centre line: 1 above, -1 below, 0 never.
pub fn crossing_side(path: &[f64]) -> i32 {
    let cx = OBSTACLE_CENTER[0];
    for w in path.chunks_exact(2).collect::<Vec<_>>().windows(2) {
        let (p, q) = (w[0], w[1]);
        if p[0] < cx && q[0] >= cx {
            let y = p[1] + (q[1] - p[1]) * (cx - p[0]) / (q[0] - p[0]);
            return if y >= OBSTACLE_CENTER[1] { 1 } else { -1 };
        }
    }
    0
}

#[wasm_bindgen(js_name = alphaBars)]
pub fn js_alpha_bars(kind: &str, t_train: usize) -> Result<Vec<f64>, JsError> {
    alpha_bars(kind, t_train).map_err(err)
}

#[wasm_bindgen(js_name = expertPaths)]
pub fn js_expert_paths(x: f64, y: f64) -> Vec<f64> {
    [Mode::Left, Mode::Right]
        .into_iter()
        .flat_map(|m| expert_path([x, y], m))
        .collect()
}

#[wasm_bindgen(js_name = noisedPath)]
pub fn js_noised_path(x: f64, y: f64, t: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    noised_path([x, y], t, seed).map_err(err)
}

#[wasm_bindgen(js_name = samplePaths)]
pub fn js_sample_paths(x: f64, y: f64, sampler: &str, steps: usize, n: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    sample_paths([x, y], sampler, steps, n, seed).map_err(err)
}

#[wasm_bindgen(js_name = crossingSide)]
pub fn js_crossing_side(path: &[f64]) -> i32 {
    crossing_side(path)
}

#[wasm_bindgen]
pub fn points() -> usize {
    POINTS
}
