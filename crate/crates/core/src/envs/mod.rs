//! Two planar point-agent tasks, their scripted experts, demonstration files
//! and training windows.

mod data;
mod task;

pub use data::{expert_episode, make_windows, stats_path, Dataset, Episode, Windows};
pub use task::{
    expert_action, steer, Env, Mode, Obstacle, Task, Vec2, DETOUR_OFFSET, DETOUR_X, EPISODE_CAP, GOAL, GOAL_RADIUS,
    MAX_STEP, OBSTACLE_CENTER, OBSTACLE_RADIUS, START_MARGIN,
};
