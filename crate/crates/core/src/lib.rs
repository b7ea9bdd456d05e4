//! Simulation worlds with controllable factors of variation, bit-exact
//! episode storage, receding-horizon planners and goal-conditioned
//! evaluation.
//!
//! ```no_run
//! use swm::{World, VariationRequest};
//! use swm::policy::RandomPolicy;
//!
//! let mut world = World::new("swm/PushT-v1", 8).unwrap();
//! world.set_policy(RandomPolicy::new(0));
//! world.reset(0, &VariationRequest::new(["agent", "block.color"])).unwrap();
//! world.step().unwrap();
//! println!("{:?}", world.infos().state.shape());
//! ```

pub mod datastore;
pub mod envs;
pub mod eval;
pub mod planning;
pub mod policy;
pub mod variation;
pub mod world;

pub use datastore::{
    ArrayData, Dataset, DatasetManifest, DatasetWriter, EpisodeRecord, StoreError, WindowSpec, WindowedDataset,
};
pub use envs::{ActionSpec, Env, EnvConfig, EnvError, Observation};
pub use eval::{evaluate, evaluate_from_dataset, EvalConfig, EvalError, EvalReport, OfflineConfig};
pub use planning::{CostModel, MpcPolicy, Plan, PlanConfig, PlanError, Solver};
pub use variation::{Assignment, Domain, Value, VariationError, VariationRequest, VariationSpace};
pub use world::{Policy, PolicyError, World, WorldConfig, WorldError, WorldInfos};
