//! Scripted policies: baselines, a TwoRoom expert, and replay.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datastore::{Dataset, StoreError};
use crate::envs::geometry::Vec2;
use crate::envs::two_room::{Layout, WALL_CENTER};
use crate::world::{Policy, PolicyError, WorldInfos};

fn action_dim(infos: &WorldInfos) -> usize {
    infos.action.ncols()
}

/// Always emits zero actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn get_action(&mut self, infos: &WorldInfos) -> Result<Array2<f32>, PolicyError> {
        Ok(Array2::zeros((infos.num_envs(), action_dim(infos))))
    }
}

/// Uniform actions in `[low, high]` from a seeded generator.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    low: f32,
    high: f32,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self::with_bounds(seed, -1.0, 1.0)
    }

    pub fn with_bounds(seed: u64, low: f32, high: f32) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            low,
            high,
        }
    }
}

impl Policy for RandomPolicy {
    fn get_action(&mut self, infos: &WorldInfos) -> Result<Array2<f32>, PolicyError> {
        let (low, high) = (self.low, self.high);
        Ok(Array2::from_shape_simple_fn(
            (infos.num_envs(), action_dim(infos)),
            || self.rng.random_range(low..=high),
        ))
    }
}

/// Plays the same action sequence in every env, indexed by `step_idx`;
/// zeros once the sequence runs out.
#[derive(Debug, Clone)]
pub struct SequencePolicy {
    actions: Array2<f32>,
}

impl SequencePolicy {
    /// `actions` is `T×A`.
    pub fn new(actions: Array2<f32>) -> Self {
        Self { actions }
    }
}

impl Policy for SequencePolicy {
    fn get_action(&mut self, infos: &WorldInfos) -> Result<Array2<f32>, PolicyError> {
        let a = action_dim(infos);
        if self.actions.ncols() != a {
            return Err(format!(
                "sequence has {} action components, env expects {a}",
                self.actions.ncols()
            )
            .into());
        }
        let mut out = Array2::zeros((infos.num_envs(), a));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            if let Some(src) = self.actions.outer_iter().nth(infos.step_idx[i]) {
                row.assign(&src);
            }
        }
        Ok(out)
    }
}

/// Replays the recorded actions between an offline start and goal frame.
///
/// From frame `start`, step `k` applies `action[start + k + 1]`, the action
/// that produced the next recorded frame. Envs without an offline source
/// get zeros.
#[derive(Debug, Clone)]
pub struct DatasetReplayPolicy {
    dataset: Dataset,
    cache: HashMap<usize, Array2<f32>>,
}

impl DatasetReplayPolicy {
    pub fn new(dataset: Dataset) -> Self {
        Self {
            dataset,
            cache: HashMap::new(),
        }
    }

    fn actions(&mut self, episode: usize) -> Result<&Array2<f32>, StoreError> {
        if !self.cache.contains_key(&episode) {
            let len = self.dataset.manifest().episodes.get(episode).map_or(0, |e| e.length);
            let data = self.dataset.read_rows(episode, "action", 0, len, 1)?;
            let arr = data
                .as_f32()
                .ok_or_else(|| StoreError::Signature {
                    key: "action".into(),
                    expected: "F32".into(),
                    got: format!("{:?}", data.dtype()),
                })?
                .clone()
                .into_dimensionality()
                .map_err(|e| StoreError::Signature {
                    key: "action".into(),
                    expected: "T × A".into(),
                    got: e.to_string(),
                })?;
            self.cache.insert(episode, arr);
        }
        Ok(&self.cache[&episode])
    }
}

impl Policy for DatasetReplayPolicy {
    fn get_action(&mut self, infos: &WorldInfos) -> Result<Array2<f32>, PolicyError> {
        let a = action_dim(infos);
        let mut out = Array2::zeros((infos.num_envs(), a));
        for i in 0..infos.num_envs() {
            let Some(src) = infos.source[i] else { continue };
            let t = src.start + infos.step_idx[i] + 1;
            if t > src.goal {
                continue;
            }
            let actions = self.actions(src.episode)?;
            out.row_mut(i).assign(&actions.row(t));
        }
        Ok(out)
    }
}

/// Scripted TwoRoom navigator: heads for the best door, crosses straight
/// through it, then goes to the goal.
#[derive(Debug, Clone, Default)]
pub struct TwoRoomExpert;

/// Extra clearance kept from the grown wall when lining up with a door.
const DOOR_CLEARANCE: f64 = 0.01;

impl TwoRoomExpert {
    pub fn new() -> Self {
        Self
    }

    /// Next waypoint for an agent at `agent` heading to `goal`.
    pub fn waypoint(layout: &Layout, agent: Vec2, goal: Vec2) -> Vec2 {
        if layout.side(agent) == layout.side(goal) {
            return goal;
        }
        let passages = layout.door_passages();
        let best = passages
            .iter()
            .map(|&(lo, hi)| {
                // Stay off the door jambs.
                let m = 0.25 * (hi - lo);
                let (lo, hi) = (lo + m, hi - m);
                let q = layout.crossing(agent, goal, lo, hi);
                ((agent - q).norm() + (q - goal).norm(), lo, hi)
            })
            .min_by(|x, y| x.0.total_cmp(&y.0));
        let Some((_, lo, hi)) = best else { return goal };
        let (across, along) = layout.to_wall_frame(agent);
        let offset = layout.thickness / 2.0 + layout.agent_radius + DOOR_CLEARANCE;
        let here = if across < WALL_CENTER { -1.0 } else { 1.0 };
        if (lo..=hi).contains(&along) {
            // Lined up: cross to the far side of the wall.
            layout.from_wall_frame(WALL_CENTER - here * offset, along)
        } else {
            let (_, goal_along) = layout.to_wall_frame(goal);
            let target = ((along + goal_along) / 2.0).clamp(lo, hi);
            layout.from_wall_frame(WALL_CENTER + here * offset, target)
        }
    }

    pub fn action(layout: &Layout, agent: Vec2, goal: Vec2) -> [f32; 2] {
        let target = Self::waypoint(layout, agent, goal);
        let a = (target - agent) * (1.0 / layout.speed);
        let a = a.cap(1.0);
        [a.x as f32, a.y as f32]
    }
}

impl Policy for TwoRoomExpert {
    fn get_action(&mut self, infos: &WorldInfos) -> Result<Array2<f32>, PolicyError> {
        if action_dim(infos) != 2 || infos.state.ncols() != crate::envs::two_room::STATE_DIM {
            return Err("TwoRoomExpert only drives swm/TwoRoom-v1".into());
        }
        let mut out = Array2::zeros((infos.num_envs(), 2));
        for i in 0..infos.num_envs() {
            let layout = Layout::from_assignment(&infos.variation[i]);
            let s = infos.state.row(i);
            let g = infos.goal_state.row(i);
            let agent = Vec2::new(s[0] as f64, s[1] as f64);
            let goal = Vec2::new(g[0] as f64, g[1] as f64);
            let [x, y] = Self::action(&layout, agent, goal);
            out[[i, 0]] = x;
            out[[i, 1]] = y;
        }
        Ok(out)
    }
}
