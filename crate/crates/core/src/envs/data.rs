use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{expert_action, Env, Mode, Task, Vec2};
use crate::error::{Error, Result};
use crate::policy::{MinMax, Normalizer};
use crate::rng::{derive_seed, substream};

/// One expert episode: `states[i]` is the position before `actions[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub task: Task,
    pub seed: u64,
    pub mode: Option<Mode>,
    pub states: Vec<Vec2>,
    pub actions: Vec<Vec2>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Re-runs the actions from the first state; returns the final env.
    pub fn replay(&self) -> Result<Env> {
        let Some(&start) = self.states.first() else {
            return Err(Error::Dataset("episode has no states".into()));
        };
        if self.states.len() != self.actions.len() {
            return Err(Error::Dataset(format!(
                "{} states for {} actions",
                self.states.len(),
                self.actions.len()
            )));
        }
        let mut env = Env::new(self.task, start);
        for (i, (&s, &a)) in self.states.iter().zip(&self.actions).enumerate() {
            if env.pos != s {
                return Err(Error::Dataset(format!("replay diverges at step {i}")));
            }
            env.step(a);
        }
        Ok(env)
    }
}

/// Runs the scripted expert from a seeded start until success or the cap.
pub fn expert_episode(task: Task, seed: u64) -> Episode {
    let mut rng = substream(seed, "episode", 0);
    let mode = match task {
        Task::Reach => None,
        Task::Avoid => Some(if rng.random_bool(0.5) { Mode::Left } else { Mode::Right }),
    };
    let mut env = Env::reset(task, &mut rng);
    let (mut states, mut actions) = (Vec::new(), Vec::new());
    while !env.finished() {
        let a = expert_action(&env, mode.unwrap_or(Mode::Left));
        states.push(env.pos);
        actions.push(a);
        env.step(a);
    }
    if states.is_empty() {
        // Started inside the goal: record a single resting step.
        states.push(env.pos);
        actions.push([0.0, 0.0]);
    }
    Episode {
        task,
        seed,
        mode,
        states,
        actions,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
}

impl Dataset {
    /// `n` expert episodes; episode `i` is seeded from `(seed, i)`.
    pub fn generate(task: Task, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("demonstration count"));
        }
        let episodes = (0..n as u64)
            .map(|i| expert_episode(task, derive_seed(seed, "demo", i)))
            .collect();
        Ok(Self { episodes })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.episodes {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_reader(r: impl BufRead) -> Result<Self> {
        let mut episodes = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Episode =
                serde_json::from_str(&line).map_err(|err| Error::Dataset(format!("line {}: {err}", i + 1)))?;
            if e.states.len() != e.actions.len() || e.states.is_empty() {
                return Err(Error::Dataset(format!("line {}: malformed episode", i + 1)));
            }
            episodes.push(e);
        }
        if episodes.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        Ok(Self { episodes })
    }

    pub fn stats(&self) -> Result<Normalizer> {
        let states = self.episodes.iter().flat_map(|e| e.states.iter().map(|s| s.as_slice()));
        let actions = self
            .episodes
            .iter()
            .flat_map(|e| e.actions.iter().map(|a| a.as_slice()));
        Ok(Normalizer {
            obs: MinMax::fit(2, states)?,
            action: MinMax::fit(2, actions)?,
        })
    }

    /// Writes the JSON-lines file and its statistics file alongside.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::File::create(path)?.write_all(self.to_jsonl()?.as_bytes())?;
        fs::write(stats_path(path), serde_json::to_string_pretty(&self.stats()?)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        Self::from_reader(BufReader::new(f))
    }

    pub fn mode_counts(&self) -> (usize, usize) {
        let left = self.episodes.iter().filter(|e| e.mode == Some(Mode::Left)).count();
        let right = self.episodes.iter().filter(|e| e.mode == Some(Mode::Right)).count();
        (left, right)
    }
}

/// `demos.jsonl` → `demos.stats.json`.
pub fn stats_path(path: &Path) -> PathBuf {
    path.with_extension("stats.json")
}

/// Training windows in world units, flattened row-major:
/// `obs` is `[N, T_o, 2]`, `actions` is `[N, T_p, 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub obs_horizon: usize,
    pub horizon: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub stats: Normalizer,
}

impl Windows {
    pub fn len(&self) -> usize {
        self.obs.len() / (2 * self.obs_horizon)
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Copies with both streams mapped to `[−1, 1]`.
    pub fn normalized(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut o = self.obs.clone();
        let mut a = self.actions.clone();
        self.stats.obs.normalize(&mut o)?;
        self.stats.action.normalize(&mut a)?;
        Ok((o, a))
    }
}

/// One window per (episode, timestep). Observations before the episode
/// start repeat the first state; actions past its end repeat the last action.
pub fn make_windows(data: &Dataset, obs_horizon: usize, horizon: usize) -> Result<Windows> {
    if data.episodes.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if obs_horizon == 0 || horizon == 0 {
        return Err(Error::Config("window lengths must be positive".into()));
    }
    let mut obs = Vec::new();
    let mut actions = Vec::new();
    for e in &data.episodes {
        let n = e.len();
        for t in 0..n {
            for k in 0..obs_horizon {
                let i = (t + k + 1).saturating_sub(obs_horizon);
                obs.extend_from_slice(&e.states[i]);
            }
            for k in 0..horizon {
                actions.extend_from_slice(&e.actions[(t + k).min(n - 1)]);
            }
        }
    }
    Ok(Windows {
        obs_horizon,
        horizon,
        obs,
        actions,
        stats: data.stats()?,
    })
}
