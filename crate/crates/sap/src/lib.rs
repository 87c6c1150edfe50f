//! NMPC motion planning and safety-critical execution for a serial
//! manipulator sharing its workspace with a moving human.
//!
//! The pipeline: a receding-horizon planner ([`planner`]) tracks a predicted
//! human hand position while keeping the arm clear of a capsule model of the
//! human body ([`geometry`]), solved each tick by a PANOC/penalty solver
//! ([`solver`]). A low-level task-space controller plus an ECBF/CLF quadratic
//! program ([`safety`]) filters the commanded force so the closed loop stays
//! inside the safe set even when the planner's solution is approximate.
//! [`sim`] closes the loop against recorded or synthetic skeleton
//! trajectories and collects safety and idle-time metrics.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod planner;
pub mod safety;
pub mod sim;
pub mod solver;

pub use error::SapError;

pub type Result<T> = std::result::Result<T, SapError>;
