//! Center-of-mass estimation for a grasped rigid object from wrist
//! force-torque readings.
//!
//! The crate covers the whole loop: a gravity-wrench simulator that labels
//! data, a closed-form single-reading solver, a Bayesian network sampled with
//! NUTS, a learned action scorer that picks the second wrist orientation,
//! precision-weighted fusion of the two readings, and a paired benchmark
//! harness comparing the active pipeline with its baselines.
// Negated comparisons are how validation rejects NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active;
pub mod analytical;
pub mod bnn;
pub mod config;
pub mod error;
pub mod mlp;
pub mod nuts;
pub mod persist;
pub mod pipeline;
pub mod rng;
pub mod sim;

pub use analytical::{solve_com_analytical, ComEstimate};
pub use bnn::{PosteriorSamples, PredictiveDistribution};
pub use error::{Error, Result};
pub use sim::{ActionBounds, NoiseModel, RigidGraspScene, WristOrientation, Wrench};
