//! Fixtures shared by the criterion benches.

use ndarray::{Array1, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swm::envs::{self, Env};
use swm::planning::StandaloneContext;
use swm::{Assignment, EnvConfig, VariationRequest};

/// A freshly reset env with its task leaves sampled from `seed`.
pub fn fresh_env(id: &str, image_size: usize, seed: u64) -> (Box<dyn Env>, Assignment) {
    let mut env = envs::make(id, EnvConfig { image_size }).expect("registered env");
    let space = env.variation_space().clone();
    let request = VariationRequest::new(env.task_leaves().iter().copied());
    let assignment = space
        .sample_request(&request, &mut ChaCha8Rng::seed_from_u64(seed))
        .expect("task variation");
    env.reset(seed, &assignment).expect("reset");
    (env, assignment)
}

/// Planning context for the env's current state and goal.
pub fn plan_context(env: &dyn Env, seed: u64, assignment: Assignment) -> StandaloneContext {
    StandaloneContext {
        state: Array1::from(env.state()),
        pixels: Array3::zeros((1, 1, 3)),
        goal_state: Array1::from(env.goal_state()),
        goal_pixels: Array3::zeros((1, 1, 3)),
        variation: assignment,
        seed,
    }
}
