//! Deterministic closed-loop simulation: skeleton playback, predictor and
//! recognizer stubs, synthetic recordings, and the three-rate trial engine.

pub mod predict;
pub mod synthetic;
pub mod trajectory;
pub mod trial;

pub use predict::{predict, recognize, Prediction, TAU_O, TAU_P};
pub use synthetic::{synthetic_trajectory, synthetic_trajectory_at};
pub use trajectory::{Action, SkeletonFrame, SkeletonTrajectory, FRAME_DT, RIGHT_HAND_JOINT};
pub use trial::{
    idle_time_experiment, plant_step, read_tick_log, run_trial, trajectory_hash, write_tick_log,
    RateCounters, TickRecord, TrialContext, TrialMetrics, TrialOutcome, ARRIVAL_TOL, FILTER_DT,
    GOAL_STANDOFF, PLAN_DT, PLANT_DT,
};
