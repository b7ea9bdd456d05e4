//! Environment contract and the native environment suite.
//!
//! Both environments live in the unit-square arena `[0, 1]²` and render
//! square RGB images (224×224 by default). Dynamics are deterministic: the
//! reset seed is recorded but the state is a pure function of the assignment
//! and the action sequence.

pub mod geometry;
pub mod push_t;
pub mod raster;
pub mod two_room;

use ndarray::Array3;
use thiserror::Error;

use crate::variation::{Assignment, VariationSpace, Violation};

pub use push_t::PushT;
pub use two_room::TwoRoom;

pub const PUSH_T_ID: &str = "swm/PushT-v1";
pub const TWO_ROOM_ID: &str = "swm/TwoRoom-v1";

pub const DEFAULT_IMAGE_SIZE: usize = 224;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment `{id}`; registered: {}", registered.join(", "))]
    UnknownEnv { id: String, registered: Vec<String> },
    #[error("invalid variation assignment: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidAssignment(Vec<Violation>),
    #[error("episode is over; call reset before stepping again")]
    EpisodeOver,
    #[error("environment has not been reset")]
    NotReset,
    #[error("action has {got} components, expected {expected}")]
    ActionShape { expected: usize, got: usize },
    #[error("action contains a non-finite component")]
    NonFiniteAction,
    #[error("state vector has {got} components, expected {expected}")]
    StateShape { expected: usize, got: usize },
}

/// Box bounds of the continuous action space.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpec {
    pub low: Vec<f32>,
    pub high: Vec<f32>,
}

impl ActionSpec {
    pub fn symmetric(dim: usize, bound: f32) -> Self {
        Self {
            low: vec![-bound; dim],
            high: vec![bound; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn clip(&self, action: &[f32]) -> Vec<f32> {
        action
            .iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(a, (l, h))| a.clamp(*l, *h))
            .collect()
    }

    pub fn contains(&self, action: &[f32]) -> bool {
        action.len() == self.dim()
            && action
                .iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(a, (l, h))| l <= a && a <= h)
    }
}

/// Rendered image plus the flat state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pixels: Array3<u8>,
    pub state: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub success: bool,
    /// Success reached or an internal budget (TwoRoom energy) exhausted.
    pub done: bool,
}

/// Contract shared by every simulated environment.
pub trait Env: Send + Sync {
    fn id(&self) -> &'static str;

    /// Catalog of factors of variation with their defaults.
    fn variation_space(&self) -> &VariationSpace;

    fn action_spec(&self) -> ActionSpec;

    fn state_dim(&self) -> usize;

    fn image_size(&self) -> usize;

    /// Default episode truncation length used when recording.
    fn max_steps(&self) -> usize;

    /// Leaves holding the start and goal configuration; online evaluation
    /// resamples them every episode.
    fn task_leaves(&self) -> &'static [&'static str];

    fn reset(&mut self, seed: u64, assignment: &Assignment) -> Result<(), EnvError>;

    /// Advances one fixed timestep. The action is clipped to the action spec.
    fn step(&mut self, action: &[f32]) -> Result<StepOutcome, EnvError>;

    fn state(&self) -> Vec<f32>;

    /// Restores the dynamic state written by [`Env::state`].
    fn set_state(&mut self, state: &[f32]) -> Result<(), EnvError>;

    /// State vector of the goal configuration.
    fn goal_state(&self) -> Vec<f32>;

    /// Re-targets the goal so that the configuration described by `state`
    /// (an observation state of this env) counts as reached.
    fn set_goal_from_state(&mut self, state: &[f32]) -> Result<(), EnvError>;

    fn is_success(&self) -> bool;

    fn is_done(&self) -> bool;

    fn render(&self) -> Array3<u8>;

    fn render_goal(&self) -> Array3<u8>;

    /// Non-negative task distance to the goal; zero-ish at success. Used by
    /// simulator-backed planning costs.
    fn goal_distance(&self) -> f64;

    fn boxed_clone(&self) -> Box<dyn Env>;

    fn observe(&self) -> Observation {
        Observation {
            pixels: self.render(),
            state: self.state(),
        }
    }

    fn goal_observation(&self) -> Observation {
        Observation {
            pixels: self.render_goal(),
            state: self.goal_state(),
        }
    }
}

impl Clone for Box<dyn Env> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvConfig {
    pub image_size: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            image_size: DEFAULT_IMAGE_SIZE,
        }
    }
}

pub fn registered_ids() -> Vec<&'static str> {
    vec![PUSH_T_ID, TWO_ROOM_ID]
}

/// Builds a registered environment by id.
pub fn make(id: &str, config: EnvConfig) -> Result<Box<dyn Env>, EnvError> {
    match id {
        PUSH_T_ID => Ok(Box::new(PushT::new(config))),
        TWO_ROOM_ID => Ok(Box::new(TwoRoom::new(config))),
        _ => Err(EnvError::UnknownEnv {
            id: id.to_string(),
            registered: registered_ids().into_iter().map(String::from).collect(),
        }),
    }
}

pub(crate) fn check_assignment(space: &VariationSpace, assignment: &Assignment) -> Result<(), EnvError> {
    let v = space.validate(assignment);
    if v.is_empty() {
        Ok(())
    } else {
        Err(EnvError::InvalidAssignment(v))
    }
}

pub(crate) fn check_action(spec: &ActionSpec, action: &[f32]) -> Result<Vec<f32>, EnvError> {
    if action.len() != spec.dim() {
        return Err(EnvError::ActionShape {
            expected: spec.dim(),
            got: action.len(),
        });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(EnvError::NonFiniteAction);
    }
    Ok(spec.clip(action))
}

pub(crate) fn real(a: &Assignment, key: &str) -> f64 {
    a.get(key).and_then(|v| v.as_f64()).unwrap_or_default()
}

pub(crate) fn point(a: &Assignment, key: &str) -> geometry::Vec2 {
    match a.get(key).and_then(|v| v.as_reals()).as_deref() {
        Some([x, y]) => geometry::Vec2::new(*x, *y),
        _ => geometry::Vec2::ZERO,
    }
}
