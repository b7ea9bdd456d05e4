//! Batched simulation facade.
//!
//! A [`World`] owns `N` environments of one id, a single attached
//! [`Policy`], and the [`WorldInfos`] record that every reset and step
//! rewrites in place. Env `i` is reset with seed `seed + i` and samples its
//! factors of variation from its own generator seeded the same way.
//!
//! Envs that succeed, exhaust an internal budget, or hit the step limit are
//! frozen until the next reset; the policy is still queried once per step
//! for the whole batch.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::datastore::{ArrayData, DatasetManifest, DatasetWriter, EpisodeMeta, EpisodeRecord, StoreError};
use crate::envs::{self, ActionSpec, Env, EnvConfig, EnvError};
use crate::variation::{Assignment, VariationError, VariationRequest, VariationSpace};

/// Error type returned by policies.
pub type PolicyError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("no policy attached")]
    NoPolicy,
    #[error("world has not been reset")]
    NotReset,
    #[error("num_envs must be at least 1")]
    NoEnvs,
    #[error("policy returned actions of shape {got:?}, expected {}×{}", expected.0, expected.1)]
    ActionShape { expected: (usize, usize), got: Vec<usize> },
    #[error("policy failed: {0}")]
    Policy(PolicyError),
    #[error("expected {expected} env starts, got {got}")]
    StartCount { expected: usize, got: usize },
    #[error("{0}")]
    Config(String),
}

/// Anything that maps the current infos to one action row per env.
pub trait Policy: Send {
    fn get_action(&mut self, infos: &WorldInfos) -> Result<Array2<f32>, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn get_action(&mut self, infos: &WorldInfos) -> Result<Array2<f32>, PolicyError> {
        (**self).get_action(infos)
    }
}

/// Where an env's start and goal came from in offline evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OfflineSource {
    pub episode: usize,
    pub start: usize,
    pub goal: usize,
}

/// Per-env simulation outputs, batched along the leading axis.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldInfos {
    pub pixels: Array4<u8>,
    pub state: Array2<f32>,
    /// Last action applied to each env (zeros right after reset).
    pub action: Array2<f32>,
    pub goal_pixels: Array4<u8>,
    pub goal_state: Array2<f32>,
    pub success: Vec<bool>,
    /// Ended by the env itself (success or an exhausted budget).
    pub terminated: Vec<bool>,
    /// Ended by the world's step limit.
    pub truncated: Vec<bool>,
    pub step_idx: Vec<usize>,
    pub seed: Vec<u64>,
    pub variation: Vec<Assignment>,
    pub source: Vec<Option<OfflineSource>>,
}

impl WorldInfos {
    /// Keys accepted by [`WorldInfos::get`].
    pub const KEYS: [&'static str; 8] = [
        "action",
        "goal_pixels",
        "goal_state",
        "pixels",
        "state",
        "step_idx",
        "success",
        "truncated",
    ];

    fn empty(n: usize, size: usize, state_dim: usize, action_dim: usize) -> Self {
        Self {
            pixels: Array4::zeros((n, size, size, 3)),
            state: Array2::zeros((n, state_dim)),
            action: Array2::zeros((n, action_dim)),
            goal_pixels: Array4::zeros((n, size, size, 3)),
            goal_state: Array2::zeros((n, state_dim)),
            success: vec![false; n],
            terminated: vec![false; n],
            truncated: vec![false; n],
            step_idx: vec![0; n],
            seed: vec![0; n],
            variation: vec![Assignment::new(); n],
            source: vec![None; n],
        }
    }

    pub fn num_envs(&self) -> usize {
        self.success.len()
    }

    /// Frozen envs ignore their action rows until the next reset.
    pub fn is_frozen(&self, i: usize) -> bool {
        self.terminated[i] || self.truncated[i]
    }

    /// Batched array under `key`, or `None` for unknown keys.
    pub fn get(&self, key: &str) -> Option<ArrayData> {
        let flags = |v: &[bool]| ArrayData::U8(Array1::from_iter(v.iter().map(|&b| b as u8)).into_dyn());
        Some(match key {
            "pixels" => ArrayData::U8(self.pixels.clone().into_dyn()),
            "state" => ArrayData::F32(self.state.clone().into_dyn()),
            "action" => ArrayData::F32(self.action.clone().into_dyn()),
            "goal_pixels" => ArrayData::U8(self.goal_pixels.clone().into_dyn()),
            "goal_state" => ArrayData::F32(self.goal_state.clone().into_dyn()),
            "success" => flags(&self.success),
            "truncated" => flags(&self.truncated),
            "step_idx" => ArrayData::F32(Array1::from_iter(self.step_idx.iter().map(|&k| k as f32)).into_dyn()),
            _ => return None,
        })
    }
}

/// Explicit start for one env, used by offline evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStart {
    pub seed: u64,
    pub assignment: Assignment,
    /// Dynamic state to restore after the reset.
    pub state: Option<Vec<f32>>,
    /// Goal given as an observation of the env.
    pub goal: Option<GoalObservation>,
    pub source: Option<OfflineSource>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalObservation {
    pub state: Vec<f32>,
    /// Goal image; `None` renders it from the env.
    pub pixels: Option<Array3<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorldConfig {
    pub image_size: usize,
    /// Step limit per episode; `None` uses the env default.
    pub max_steps: Option<usize>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            image_size: envs::DEFAULT_IMAGE_SIZE,
            max_steps: None,
        }
    }
}

pub struct World {
    env_id: String,
    config: WorldConfig,
    envs: Vec<Box<dyn Env>>,
    policy: Option<Box<dyn Policy>>,
    infos: WorldInfos,
    max_steps: usize,
    spec: ActionSpec,
    is_reset: bool,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("env_id", &self.env_id)
            .field("num_envs", &self.envs.len())
            .field("max_steps", &self.max_steps)
            .field("has_policy", &self.policy.is_some())
            .finish()
    }
}

impl World {
    pub fn new(env_id: &str, num_envs: usize) -> Result<Self, WorldError> {
        Self::with_config(env_id, num_envs, WorldConfig::default())
    }

    pub fn with_config(env_id: &str, num_envs: usize, config: WorldConfig) -> Result<Self, WorldError> {
        let env_config = EnvConfig {
            image_size: config.image_size,
        };
        let first = envs::make(env_id, env_config)?;
        if num_envs == 0 {
            return Err(WorldError::NoEnvs);
        }
        if config.image_size == 0 {
            return Err(WorldError::Config("image_size must be at least 1".into()));
        }
        let spec = first.action_spec();
        let max_steps = config.max_steps.unwrap_or(first.max_steps());
        let infos = WorldInfos::empty(num_envs, config.image_size, first.state_dim(), spec.dim());
        let envs = std::iter::repeat_n(first, num_envs).collect();
        Ok(Self {
            env_id: env_id.to_string(),
            config,
            envs,
            policy: None,
            infos,
            max_steps,
            spec,
            is_reset: false,
        })
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn config(&self) -> WorldConfig {
        self.config
    }

    pub fn action_spec(&self) -> &ActionSpec {
        &self.spec
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn set_max_steps(&mut self, max_steps: usize) {
        self.max_steps = max_steps;
    }

    /// The variation catalog of one env (all envs share it).
    pub fn single_variation_space(&self) -> &VariationSpace {
        self.envs[0].variation_space()
    }

    pub fn task_leaves(&self) -> &'static [&'static str] {
        self.envs[0].task_leaves()
    }

    pub fn envs(&self) -> &[Box<dyn Env>] {
        &self.envs
    }

    pub fn infos(&self) -> &WorldInfos {
        &self.infos
    }

    /// Attaches a policy, replacing any previous one.
    pub fn set_policy<P: Policy + 'static>(&mut self, policy: P) {
        self.policy = Some(Box::new(policy));
    }

    pub fn take_policy(&mut self) -> Option<Box<dyn Policy>> {
        self.policy.take()
    }

    pub fn has_policy(&self) -> bool {
        self.policy.is_some()
    }

    /// Resets every env. Env `i` uses seed `seed + i` both as its reset seed
    /// and to sample its factors of variation.
    pub fn reset(&mut self, seed: u64, options: &VariationRequest) -> Result<(), WorldError> {
        let space = self.single_variation_space();
        let selected = space.resolve(&options.variation)?;
        let starts = (0..self.num_envs())
            .map(|i| {
                let env_seed = seed.wrapping_add(i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(env_seed);
                let assignment = space.sample(&selected, &mut rng, &options.variation_values)?;
                Ok(EnvStart {
                    seed: env_seed,
                    assignment,
                    state: None,
                    goal: None,
                    source: None,
                })
            })
            .collect::<Result<Vec<_>, VariationError>>()?;
        self.reset_with(&starts)
    }

    /// Resets env `i` exactly as described by `starts[i]`.
    pub fn reset_with(&mut self, starts: &[EnvStart]) -> Result<(), WorldError> {
        if starts.len() != self.num_envs() {
            return Err(WorldError::StartCount {
                expected: self.num_envs(),
                got: starts.len(),
            });
        }
        self.is_reset = false;
        let results: Vec<Result<_, EnvError>> = self
            .envs
            .par_iter_mut()
            .zip(starts.par_iter())
            .map(|(env, start)| {
                env.reset(start.seed, &start.assignment)?;
                if let Some(state) = &start.state {
                    env.set_state(state)?;
                }
                let goal = match &start.goal {
                    Some(g) => {
                        env.set_goal_from_state(&g.state)?;
                        let pixels = g.pixels.clone().unwrap_or_else(|| env.render_goal());
                        (g.state.clone(), pixels)
                    }
                    None => (env.goal_state(), env.render_goal()),
                };
                Ok((env.observe(), goal, env.is_success(), env.is_done()))
            })
            .collect();

        let n = self.num_envs();
        let mut infos = WorldInfos::empty(n, self.config.image_size, self.infos.state.ncols(), self.spec.dim());
        for (i, r) in results.into_iter().enumerate() {
            let (obs, (goal_state, goal_pixels), success, done) = r?;
            infos.pixels.slice_mut(s![i, .., .., ..]).assign(&obs.pixels);
            infos.state.row_mut(i).assign(&Array1::from(obs.state));
            infos.goal_pixels.slice_mut(s![i, .., .., ..]).assign(&goal_pixels);
            infos.goal_state.row_mut(i).assign(&Array1::from(goal_state));
            infos.success[i] = success;
            infos.terminated[i] = done;
            infos.truncated[i] = !done && self.max_steps == 0;
            infos.seed[i] = starts[i].seed;
            infos.variation[i] = starts[i].assignment.clone();
            infos.source[i] = starts[i].source;
        }
        self.infos = infos;
        self.is_reset = true;
        Ok(())
    }

    /// Queries the policy once and advances every active env by one step.
    pub fn step(&mut self) -> Result<(), WorldError> {
        if !self.is_reset {
            return Err(WorldError::NotReset);
        }
        let policy = self.policy.as_mut().ok_or(WorldError::NoPolicy)?;
        let actions = policy.get_action(&self.infos).map_err(WorldError::Policy)?;
        let n = self.envs.len();
        let expected = (n, self.spec.dim());
        if actions.dim() != expected {
            return Err(WorldError::ActionShape {
                expected,
                got: actions.shape().to_vec(),
            });
        }

        let spec = &self.spec;
        let infos = &self.infos;
        let results: Vec<Result<_, EnvError>> = self
            .envs
            .par_iter_mut()
            .enumerate()
            .map(|(i, env)| {
                if infos.is_frozen(i) {
                    return Ok(None);
                }
                let row = spec.clip(&actions.row(i).to_vec());
                let outcome = env.step(&row)?;
                Ok(Some((row, env.observe(), outcome)))
            })
            .collect();

        for (i, r) in results.into_iter().enumerate() {
            self.infos.step_idx[i] += 1;
            let Some((row, obs, outcome)) = r? else {
                continue;
            };
            let info = &mut self.infos;
            info.action.row_mut(i).assign(&Array1::from(row));
            info.pixels.slice_mut(s![i, .., .., ..]).assign(&obs.pixels);
            info.state.row_mut(i).assign(&Array1::from(obs.state));
            info.success[i] = outcome.success;
            info.terminated[i] = outcome.done;
            info.truncated[i] = !outcome.done && info.step_idx[i] >= self.max_steps;
        }
        Ok(())
    }

    /// Steps until every env is frozen or `limit` steps have been taken.
    pub fn run(&mut self, limit: usize) -> Result<usize, WorldError> {
        let mut steps = 0;
        while steps < limit && (0..self.num_envs()).any(|i| !self.infos.is_frozen(i)) {
            self.step()?;
            steps += 1;
        }
        Ok(steps)
    }

    /// Rolls out `episodes` episodes with the attached policy and stores them
    /// under `root/name`.
    ///
    /// Episodes run in batches of `num_envs`; batch `b` is reset with seed
    /// `seed + b * num_envs`, so episode `e` always gets env seed `seed + e`.
    /// Each episode holds every frame up to and including the one where its
    /// env froze. `action[t]` is the action that produced frame `t`
    /// (`action[0]` is zero).
    pub fn record_dataset(
        &mut self,
        root: &Path,
        name: &str,
        episodes: usize,
        seed: u64,
        options: &VariationRequest,
        overwrite: bool,
    ) -> Result<DatasetManifest, WorldError> {
        if self.policy.is_none() {
            return Err(WorldError::NoPolicy);
        }
        if episodes == 0 {
            return Err(WorldError::Config("episodes must be at least 1".into()));
        }
        let space = self.single_variation_space();
        options.check(space)?;
        let varied: Vec<String> = varied_leaves(space, options)?.into_iter().collect();

        let mut writer = DatasetWriter::create(root, name, &self.env_id, overwrite)?;
        let n = self.num_envs();
        let mut done = 0;
        while done < episodes {
            let batch = (episodes - done).min(n);
            self.reset(seed.wrapping_add(done as u64), options)?;
            let mut frames: Vec<Vec<Frame>> = (0..batch).map(|i| vec![self.frame(i)]).collect();
            while (0..batch).any(|i| !self.infos.is_frozen(i)) {
                let active: Vec<bool> = (0..batch).map(|i| !self.infos.is_frozen(i)).collect();
                self.step()?;
                for (i, f) in frames.iter_mut().enumerate() {
                    if active[i] {
                        f.push(self.frame(i));
                    }
                }
            }
            for (i, f) in frames.into_iter().enumerate() {
                let record = self.episode_record(i, f);
                let meta = EpisodeMeta {
                    seed: self.infos.seed[i],
                    variation: self.infos.variation[i].clone(),
                    varied: varied.clone(),
                };
                writer.append(&record, meta)?;
            }
            done += batch;
        }
        Ok(writer.finalize()?)
    }

    fn frame(&self, i: usize) -> Frame {
        let info = &self.infos;
        Frame {
            pixels: info.pixels.index_axis(Axis(0), i).to_owned(),
            state: info.state.row(i).to_vec(),
            action: info.action.row(i).to_vec(),
            success: info.success[i],
        }
    }

    fn episode_record(&self, i: usize, frames: Vec<Frame>) -> EpisodeRecord {
        let t = frames.len();
        let size = self.config.image_size;
        let d = self.infos.state.ncols();
        let a = self.spec.dim();
        let mut pixels = Vec::with_capacity(t * size * size * 3);
        let mut state = Vec::with_capacity(t * d);
        let mut action = Vec::with_capacity(t * a);
        let mut success = Vec::with_capacity(t);
        for f in frames {
            pixels.extend(f.pixels.iter());
            state.extend(f.state);
            action.extend(f.action);
            success.push(f.success as u8);
        }
        let arr_u8 = |shape: &[usize], v: Vec<u8>| ArrayData::U8(ArrayD::from_shape_vec(IxDyn(shape), v).unwrap());
        let arr_f32 = |shape: &[usize], v: Vec<f32>| ArrayData::F32(ArrayD::from_shape_vec(IxDyn(shape), v).unwrap());
        let mut rec = EpisodeRecord::default();
        rec.steps.insert("pixels".into(), arr_u8(&[t, size, size, 3], pixels));
        rec.steps.insert("state".into(), arr_f32(&[t, d], state));
        rec.steps.insert("action".into(), arr_f32(&[t, a], action));
        rec.steps.insert("success".into(), arr_u8(&[t], success));
        rec.statics.insert(
            "goal_pixels".into(),
            ArrayData::U8(self.infos.goal_pixels.index_axis(Axis(0), i).to_owned().into_dyn()),
        );
        rec.statics.insert(
            "goal_state".into(),
            ArrayData::F32(self.infos.goal_state.row(i).to_owned().into_dyn()),
        );
        rec
    }
}

struct Frame {
    pixels: Array3<u8>,
    state: Vec<f32>,
    action: Vec<f32>,
    success: bool,
}

/// Leaves resolved by `options`, minus the ones it pins.
pub fn varied_leaves(space: &VariationSpace, options: &VariationRequest) -> Result<BTreeSet<String>, VariationError> {
    let mut out = space.resolve(&options.variation)?;
    out.retain(|l| !options.variation_values.contains_key(l));
    Ok(out)
}
