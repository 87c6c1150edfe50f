//! Predictor and recognizer stubs standing in for the learned networks:
//! an oracle that replays the recorded future (optionally noised) and a
//! constant-velocity extrapolator; a label pass-through recognizer with
//! configurable confusion noise.

use nalgebra::Vector3;
use rand::Rng;

use crate::config::Predictor;
use crate::geometry::SKELETON_JOINTS;

use super::trajectory::{Action, SkeletonTrajectory, ALL_ACTIONS, RIGHT_HAND_JOINT};

/// Observation history length, frames (1 s at 20 Hz).
pub const TAU_O: usize = 20;
/// Prediction horizon, frames (1 s at 20 Hz).
pub const TAU_P: usize = 20;

/// Predicted future: right-hand positions and full skeletons, `TAU_P`
/// frames covering the next second.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub p_rh: Vec<Vector3<f64>>,
    pub p_o: Vec<Vec<Vector3<f64>>>,
}

impl Prediction {
    fn from_skeletons(p_o: Vec<Vec<Vector3<f64>>>) -> Self {
        let p_rh = p_o.iter().map(|s| s[RIGHT_HAND_JOINT]).collect();
        Self { p_rh, p_o }
    }
}

/// Predicts the next `TAU_P` frames from the frame at `current`.
///
/// Requires `TAU_O` frames of history (`current >= TAU_O - 1`). The oracle
/// replays the recorded future with zero-mean noise bounded by
/// `noise_bound` in the inf-norm; it returns `None` when fewer than `TAU_P`
/// recorded frames remain (end-of-trajectory stop signal). The
/// constant-velocity mode extrapolates each joint from the last two frames.
pub fn predict(
    mode: Predictor,
    traj: &SkeletonTrajectory,
    current: usize,
    noise_bound: f64,
    rng: &mut impl Rng,
) -> Option<Prediction> {
    if current + 1 < TAU_O || current >= traj.len() {
        return None;
    }
    match mode {
        Predictor::Oracle => {
            if current + TAU_P >= traj.len() {
                return None;
            }
            let mut p_o = Vec::with_capacity(TAU_P);
            for k in 1..=TAU_P {
                let mut joints = traj.frames[current + k].joints.clone();
                if noise_bound > 0.0 {
                    for p in joints.iter_mut() {
                        for a in 0..3 {
                            p[a] += rng.gen_range(-noise_bound..=noise_bound);
                        }
                    }
                }
                p_o.push(joints);
            }
            Some(Prediction::from_skeletons(p_o))
        }
        Predictor::ConstantVelocity => {
            let last = &traj.frames[current].joints;
            let prev = &traj.frames[current - 1].joints;
            let mut p_o = Vec::with_capacity(TAU_P);
            for k in 1..=TAU_P {
                let joints: Vec<Vector3<f64>> = (0..SKELETON_JOINTS)
                    .map(|j| last[j] + (last[j] - prev[j]) * k as f64)
                    .collect();
                p_o.push(joints);
            }
            Some(Prediction::from_skeletons(p_o))
        }
    }
}

/// Perfect-recognizer stub with confusion noise: returns the recorded label,
/// flipped to a uniformly random other label with probability `p_err`.
pub fn recognize(true_label: Action, p_err: f64, rng: &mut impl Rng) -> Action {
    if p_err > 0.0 && rng.gen_bool(p_err.min(1.0)) {
        let others: Vec<Action> = ALL_ACTIONS
            .iter()
            .copied()
            .filter(|a| *a != true_label)
            .collect();
        others[rng.gen_range(0..others.len())]
    } else {
        true_label
    }
}
