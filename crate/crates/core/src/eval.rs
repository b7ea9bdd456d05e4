//! Goal-conditioned evaluation.
//!
//! Online episodes sample a fresh start and goal (the env's task leaves are
//! always resampled on top of the requested variation). Offline episodes
//! take both from one recorded trajectory: start at frame `i`, goal at frame
//! `j` with `1 <= j - i <= max_gap`, so the recorded actions reach the goal
//! in `j - i` steps.

use ndarray::{Array3, Ix3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{Dataset, StoreError};
use crate::variation::{Assignment, VariationRequest};
use crate::world::{EnvStart, GoalObservation, OfflineSource, World, WorldError};

pub const DEFAULT_BUDGET: usize = 50;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("dataset has no `{0}` key; stored keys: {1}")]
    MissingKey(String, String),
    #[error("dataset was recorded on {dataset}, world runs {world}")]
    EnvMismatch { dataset: String, world: String },
    #[error("dataset has no episode with at least 2 frames")]
    NoPairs,
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    pub budget: usize,
    pub options: VariationRequest,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            seed: 0,
            budget: DEFAULT_BUDGET,
            options: VariationRequest::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineConfig {
    pub episodes: usize,
    pub seed: u64,
    pub budget: usize,
    pub max_gap: usize,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            seed: 0,
            budget: DEFAULT_BUDGET,
            max_gap: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub index: usize,
    pub success: bool,
    /// Steps taken before the env froze (success, budget or exhaustion).
    pub steps: usize,
    pub seed: u64,
    pub variation: Assignment,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source: Option<OfflineSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub env_id: String,
    pub budget: usize,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Offline only: recorded episodes too short to yield a start/goal pair.
    pub skipped: usize,
    pub results: Vec<EpisodeResult>,
}

impl EvalReport {
    fn new(protocol: &str, env_id: &str, budget: usize, results: Vec<EpisodeResult>, skipped: usize) -> Self {
        let successes = results.iter().filter(|r| r.success).count();
        let episodes = results.len();
        let success_rate = if episodes == 0 {
            0.0
        } else {
            100.0 * successes as f64 / episodes as f64
        };
        Self {
            protocol: protocol.to_string(),
            env_id: env_id.to_string(),
            budget,
            episodes,
            successes,
            success_rate,
            skipped,
            results,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        format!("Success Rate: {:.1}", self.success_rate)
    }
}

/// Runs the current batch for at most `budget` steps and reports, per env,
/// success and the step at which it froze.
fn run_batch(world: &mut World, budget: usize) -> Result<Vec<(bool, usize)>, WorldError> {
    let saved = world.max_steps();
    world.set_max_steps(budget);
    let n = world.num_envs();
    let mut frozen_at: Vec<Option<usize>> = (0..n).map(|i| world.infos().is_frozen(i).then_some(0)).collect();
    let mut steps = 0;
    let outcome = (|| -> Result<(), WorldError> {
        while steps < budget && frozen_at.iter().any(Option::is_none) {
            world.step()?;
            steps += 1;
            for (i, f) in frozen_at.iter_mut().enumerate() {
                if f.is_none() && world.infos().is_frozen(i) {
                    *f = Some(steps);
                }
            }
        }
        Ok(())
    })();
    world.set_max_steps(saved);
    outcome?;
    Ok((0..n)
        .map(|i| (world.infos().success[i], frozen_at[i].unwrap_or(steps)))
        .collect())
}

/// Online protocol: episode `e` is env-reset with seed `seed + e` and its
/// start and goal resampled.
pub fn evaluate(world: &mut World, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    if config.budget == 0 {
        return Err(EvalError::Config("budget must be at least 1".into()));
    }
    if !world.has_policy() {
        return Err(WorldError::NoPolicy.into());
    }
    let mut options = config.options.clone();
    for leaf in world.task_leaves() {
        if !options.variation.iter().any(|s| s == leaf) {
            options.variation.push(leaf.to_string());
        }
    }
    let n = world.num_envs();
    let mut results = Vec::with_capacity(config.episodes);
    while results.len() < config.episodes {
        let base = results.len();
        let batch = (config.episodes - base).min(n);
        world.reset(config.seed.wrapping_add(base as u64), &options)?;
        let outcome = run_batch(world, config.budget)?;
        for (i, &(success, steps)) in outcome.iter().take(batch).enumerate() {
            results.push(EpisodeResult {
                index: base + i,
                success,
                steps,
                seed: world.infos().seed[i],
                variation: world.infos().variation[i].clone(),
                source: None,
            });
        }
    }
    Ok(EvalReport::new("online", world.env_id(), config.budget, results, 0))
}

/// Every admissible `(episode, i, j)` with `1 <= j - i <= max_gap`, plus the
/// number of episodes too short to contribute.
pub fn offline_pairs(lengths: &[usize], max_gap: usize) -> (Vec<OfflineSource>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (episode, &len) in lengths.iter().enumerate() {
        if len < 2 {
            skipped += 1;
            continue;
        }
        for start in 0..len - 1 {
            for goal in start + 1..=(start + max_gap).min(len - 1) {
                out.push(OfflineSource { episode, start, goal });
            }
        }
    }
    (out, skipped)
}

/// Draws `count` pairs: a seeded shuffle without replacement, then uniform
/// draws with replacement once every pair has been used.
pub fn sample_pairs(pairs: &[OfflineSource], count: usize, seed: u64) -> Vec<OfflineSource> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = pairs.to_vec();
    order.shuffle(&mut rng);
    order.truncate(count);
    while order.len() < count {
        order.push(pairs[rng.random_range(0..pairs.len())]);
    }
    order
}

/// Offline protocol over a recorded dataset.
pub fn evaluate_from_dataset(
    world: &mut World,
    dataset: &Dataset,
    config: &OfflineConfig,
) -> Result<EvalReport, EvalError> {
    if config.budget == 0 || config.max_gap == 0 {
        return Err(EvalError::Config("budget and max_gap must be at least 1".into()));
    }
    if !world.has_policy() {
        return Err(WorldError::NoPolicy.into());
    }
    let manifest = dataset.manifest();
    if manifest.env_id != world.env_id() {
        return Err(EvalError::EnvMismatch {
            dataset: manifest.env_id.clone(),
            world: world.env_id().to_string(),
        });
    }
    if !manifest.keys.contains_key("state") {
        return Err(EvalError::MissingKey("state".into(), dataset.keys().join(", ")));
    }
    let size = world.config().image_size;
    let use_pixels = manifest
        .keys
        .get("pixels")
        .is_some_and(|k| k.per_step && k.shape == [size, size, 3]);

    let lengths: Vec<usize> = manifest.episodes.iter().map(|e| e.length).collect();
    let (pairs, skipped) = offline_pairs(&lengths, config.max_gap);
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let chosen = sample_pairs(&pairs, config.episodes, config.seed);

    let read_state = |episode: usize, t: usize| -> Result<Vec<f32>, EvalError> {
        let a = dataset.read_rows(episode, "state", t, 1, 1)?;
        let a = a
            .as_f32()
            .ok_or_else(|| EvalError::MissingKey("state (f32)".into(), dataset.keys().join(", ")))?;
        Ok(a.iter().copied().collect())
    };
    let read_pixels = |episode: usize, t: usize| -> Result<Option<Array3<u8>>, EvalError> {
        if !use_pixels {
            return Ok(None);
        }
        let a = dataset.read_rows(episode, "pixels", t, 1, 1)?;
        let a = a.as_u8().expect("signature checked").clone();
        let a = a
            .into_shape_with_order(ndarray::IxDyn(&[size, size, 3]))
            .expect("one frame");
        Ok(Some(a.into_dimensionality::<Ix3>().expect("rank 3")))
    };

    let n = world.num_envs();
    let mut results = Vec::with_capacity(config.episodes);
    for chunk in chosen.chunks(n) {
        let mut starts = Vec::with_capacity(n);
        for src in chunk {
            let entry = &manifest.episodes[src.episode];
            starts.push(EnvStart {
                seed: entry.meta.seed,
                assignment: entry.meta.variation.clone(),
                state: Some(read_state(src.episode, src.start)?),
                goal: Some(GoalObservation {
                    state: read_state(src.episode, src.goal)?,
                    pixels: read_pixels(src.episode, src.goal)?,
                }),
                source: Some(*src),
            });
        }
        // Pad a short final batch by repeating its first start.
        while starts.len() < n {
            starts.push(starts[0].clone());
        }
        world.reset_with(&starts)?;
        let outcome = run_batch(world, config.budget)?;
        for (i, (src, &(success, steps))) in chunk.iter().zip(&outcome).enumerate() {
            results.push(EpisodeResult {
                index: results.len(),
                success,
                steps,
                seed: starts[i].seed,
                variation: starts[i].assignment.clone(),
                source: Some(*src),
            });
        }
    }
    Ok(EvalReport::new(
        "offline",
        world.env_id(),
        config.budget,
        results,
        skipped,
    ))
}
