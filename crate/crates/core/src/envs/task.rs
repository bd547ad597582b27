use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-component bound on the velocity command.
pub const MAX_STEP: f64 = 0.05;
pub const GOAL_RADIUS: f64 = 0.03;
pub const EPISODE_CAP: usize = 200;
pub const GOAL: [f64; 2] = [0.9, 0.5];
pub const OBSTACLE_CENTER: [f64; 2] = [0.5, 0.5];
pub const OBSTACLE_RADIUS: f64 = 0.15;
/// Detour height above (left mode) and below (right mode) the obstacle.
pub const DETOUR_OFFSET: f64 = 0.3;
pub const DETOUR_X: [f64; 2] = [0.32, 0.68];
/// Reach starts are at least this far from the goal.
pub const START_MARGIN: f64 = 0.1;

pub type Vec2 = [f64; 2];

fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Drive to a fixed goal.
    #[default]
    Reach,
    /// Reach the same goal around a circular obstacle.
    Avoid,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Reach, Task::Avoid];

    pub fn name(self) -> &'static str {
        match self {
            Self::Reach => "reach",
            Self::Avoid => "avoid",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reach" => Ok(Self::Reach),
            "avoid" => Ok(Self::Avoid),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}

/// Which side of the obstacle a trajectory passes. Travel is in `+x`, so
/// left is above (`+y`) and right is below.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub radius: f64,
}

impl Obstacle {
    pub fn contains(&self, p: Vec2) -> bool {
        dist(p, self.center) < self.radius
    }
}

/// Planar point agent in the unit square.
#[derive(Clone, Debug, PartialEq)]
pub struct Env {
    pub task: Task,
    pub pos: Vec2,
    pub goal: Vec2,
    pub obstacle: Option<Obstacle>,
    pub steps: usize,
    pub done: bool,
    /// Set once the agent has been inside the obstacle; never cleared.
    pub failed: bool,
    /// Side of the obstacle at the first crossing of its center line.
    pub crossing: Option<Mode>,
}

impl Env {
    pub fn new(task: Task, start: Vec2) -> Self {
        let obstacle = (task == Task::Avoid).then_some(Obstacle {
            center: OBSTACLE_CENTER,
            radius: OBSTACLE_RADIUS,
        });
        let pos = [start[0].clamp(0.0, 1.0), start[1].clamp(0.0, 1.0)];
        let mut env = Self {
            task,
            pos,
            goal: GOAL,
            obstacle,
            steps: 0,
            done: false,
            failed: false,
            crossing: None,
        };
        env.update_flags(pos);
        env
    }

    /// Samples a start state for `task`.
    pub fn reset<R: Rng + ?Sized>(task: Task, rng: &mut R) -> Self {
        let start = match task {
            Task::Reach => loop {
                let p = [rng.random::<f64>(), rng.random::<f64>()];
                if dist(p, GOAL) >= START_MARGIN {
                    break p;
                }
            },
            Task::Avoid => [rng.random_range(0.05..=0.25), rng.random_range(0.3..=0.7)],
        };
        Self::new(task, start)
    }

    pub fn at_goal(&self) -> bool {
        dist(self.pos, self.goal) < GOAL_RADIUS
    }

    /// No further progress is possible: success, failure, or the step cap.
    pub fn finished(&self) -> bool {
        self.done || self.failed || self.steps >= EPISODE_CAP
    }

    pub fn success(&self) -> bool {
        self.done && !self.failed
    }

    fn update_flags(&mut self, prev: Vec2) {
        if let Some(ob) = self.obstacle {
            if ob.contains(self.pos) {
                self.failed = true;
            }
            if self.crossing.is_none() && prev[0] < ob.center[0] && self.pos[0] >= ob.center[0] {
                let y = prev[1] + (self.pos[1] - prev[1]) * (ob.center[0] - prev[0]) / (self.pos[0] - prev[0]);
                self.crossing = Some(if y >= ob.center[1] { Mode::Left } else { Mode::Right });
            }
        }
        self.done = self.at_goal() && !self.failed;
    }

    /// Applies a velocity command. Components are clamped to `±MAX_STEP`
    /// and the position to the arena; non-finite components count as zero.
    pub fn step(&mut self, action: Vec2) -> bool {
        let prev = self.pos;
        for (p, a) in self.pos.iter_mut().zip(action) {
            let a = if a.is_finite() {
                a.clamp(-MAX_STEP, MAX_STEP)
            } else {
                0.0
            };
            *p = (*p + a).clamp(0.0, 1.0);
        }
        self.steps += 1;
        self.update_flags(prev);
        self.done
    }
}

/// Proportional controller toward `target`, speed-clamped to `MAX_STEP`.
pub fn steer(pos: Vec2, target: Vec2) -> Vec2 {
    let d = [target[0] - pos[0], target[1] - pos[1]];
    let n = d[0].hypot(d[1]);
    if n <= MAX_STEP {
        d
    } else {
        [d[0] * MAX_STEP / n, d[1] * MAX_STEP / n]
    }
}

/// Scripted demonstrator. The avoid expert follows two detour waypoints on
/// its mode's side, then the goal; the waypoint is chosen from the current
/// position, so the expert needs no memory.
pub fn expert_action(env: &Env, mode: Mode) -> Vec2 {
    if env.at_goal() {
        return [0.0, 0.0];
    }
    match env.task {
        Task::Reach => steer(env.pos, env.goal),
        Task::Avoid => {
            let y = match mode {
                Mode::Left => OBSTACLE_CENTER[1] + DETOUR_OFFSET,
                Mode::Right => OBSTACLE_CENTER[1] - DETOUR_OFFSET,
            };
            let target = if env.pos[0] < DETOUR_X[0] - 1e-9 {
                [DETOUR_X[0], y]
            } else if env.pos[0] < DETOUR_X[1] - 1e-9 {
                [DETOUR_X[1], y]
            } else {
                env.goal
            };
            steer(env.pos, target)
        }
    }
}
