//! 2-D navigation simulator: procedurally generated worlds, a raycast
//! renderer, a pure-pursuit expert, failure injection, and demonstration
//! collection.
//!
//! The robot is a unicycle (dt = 0.1 s, v <= 1 unit/s, |omega| <= 1.5
//! rad/s, body radius 0.3) driving polyline routes of at least 60 units
//! through three layout families.  Observations are 48x64 grayscale
//! raycast images; everything is deterministic in the world seed.

mod dataset;
mod expert;
mod failure;
mod layouts;
mod render;
mod world;

pub use dataset::{collect_dataset, rollout_expert, spawn_for_seed, CollectConfig, Dataset, Trajectory};
pub use expert::{expert_action, reached_goal, LOOKAHEAD};
pub use failure::{gt_bins, FailureKind, FailureSpec, Side};
pub use layouts::{build_world, CORRIDOR_WIDTH, MIN_PATH_LEN};
pub use render::{render, BACKGROUND, FOV};
pub use world::{
    wrap_angle, Layout, Mover, Segment, WorldState, DT, OMEGA_MAX, RAY_RANGE, R_ROBOT, V_MAX,
};
