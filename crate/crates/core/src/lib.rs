//! Non-learned core of a dexterous grasping pipeline: SO(3) grid densities,
//! an articulated hand with analytic signed distances, grasp energies with
//! hand-derived gradients, energy-descent synthesis and test-time
//! refinement, wrench-space quality, normalizing-flow bijections, diversity
//! metrics, and goal-conditioned rewards.

pub mod energy;
pub mod error;
pub mod flow;
pub mod hand;
pub mod lp;
pub mod metrics;
pub mod policy;
pub mod quality;
pub mod record;
pub mod scene;
pub mod so3;
pub mod synthesis;

pub use error::{Error, Result};
