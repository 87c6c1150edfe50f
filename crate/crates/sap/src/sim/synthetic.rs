//! Scripted synthetic screw-driver-task recordings: a standing human whose
//! right hand moves through the six subtasks via eased waypoint segments.
//! Stands in for motion-capture recordings; the CSV format accepts real ones.

use nalgebra::Vector3;

use crate::geometry::SKELETON_JOINTS;
use crate::Result;

use super::trajectory::{Action, SkeletonFrame, SkeletonTrajectory, FRAME_DT, RIGHT_HAND_JOINT};

/// Cosine ease between 0 and 1.
fn smooth(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    0.5 - 0.5 * (std::f64::consts::PI * s).cos()
}

fn lerp(a: Vector3<f64>, b: Vector3<f64>, s: f64) -> Vector3<f64> {
    a + (b - a) * s
}

struct Phase {
    label: Action,
    duration: f64,
    /// Hand position at the end of the phase.
    hand_end: Vector3<f64>,
    /// Vertical dip amplitude applied mid-phase (pick up / put down).
    dip: f64,
    /// Lateral oscillation amplitude (operate screw-driver).
    wiggle: f64,
}

/// Generates one labeled recording. `variant` (0..3) shifts the interactive
/// position and timing; `pelvis` places the human in the world (robot base
/// at the origin). The interactive position is `pelvis + (-0.75, 0, -0.35)`.
pub fn synthetic_trajectory_at(variant: usize, pelvis: Vector3<f64>) -> Result<SkeletonTrajectory> {
    let v = (variant % 3) as f64;
    // Variant-dependent interactive position offset and pacing.
    let p_int = pelvis + Vector3::new(-0.75, -0.08 + 0.08 * v, -0.35 + 0.05 * v);
    let stretch = 1.0 + 0.1 * v;

    let hand_rest = pelvis + Vector3::new(-0.10, -0.30, -0.15);
    let hand_picked = pelvis + Vector3::new(-0.25, -0.20, -0.10);

    let phases = [
        Phase {
            label: Action::PickUp,
            duration: 2.0 * stretch,
            hand_end: hand_picked,
            dip: 0.25,
            wiggle: 0.0,
        },
        Phase {
            label: Action::MoveForward,
            duration: 2.5 * stretch,
            hand_end: p_int,
            dip: 0.0,
            wiggle: 0.0,
        },
        Phase {
            label: Action::TakeTheScrew,
            duration: 1.5,
            hand_end: p_int,
            dip: 0.0,
            wiggle: 0.0,
        },
        Phase {
            label: Action::OperateScrewDriver,
            duration: 3.0,
            hand_end: p_int + Vector3::new(0.05, 0.0, 0.05),
            dip: 0.0,
            wiggle: 0.03,
        },
        Phase {
            label: Action::MoveBackward,
            duration: 2.0 * stretch,
            hand_end: hand_rest,
            dip: 0.0,
            wiggle: 0.0,
        },
        Phase {
            label: Action::PutDown,
            duration: 1.5,
            hand_end: hand_rest,
            dip: 0.20,
            wiggle: 0.0,
        },
    ];

    let mut frames = Vec::new();
    let mut t = 0.0;
    let mut hand_start = hand_rest;
    for phase in &phases {
        let steps = (phase.duration / FRAME_DT).round() as usize;
        for k in 0..steps {
            let s = k as f64 / steps as f64;
            let mut hand = lerp(hand_start, phase.hand_end, smooth(s));
            // Mid-phase vertical dip for pick up / put down.
            hand.z -= phase.dip * (std::f64::consts::PI * s).sin();
            // Small lateral oscillation while operating the screw driver.
            hand.y += phase.wiggle * (2.0 * std::f64::consts::PI * 2.0 * s * phase.duration).sin();
            frames.push(SkeletonFrame {
                t,
                label: phase.label,
                joints: skeleton_for(pelvis, hand),
            });
            t += FRAME_DT;
        }
        hand_start = phase.hand_end;
    }
    SkeletonTrajectory::new(frames)
}

/// Default placement: human standing 1.3 m in front of the robot base.
pub fn synthetic_trajectory(variant: usize) -> Result<SkeletonTrajectory> {
    synthetic_trajectory_at(variant, Vector3::new(1.3, 0.3, 0.9))
}

/// Builds all 32 joints for a standing posture with the right hand at
/// `hand`. Only the joints referenced by the canonical bone map matter for
/// collision; the rest sit on the torso so predictions stay finite.
fn skeleton_for(pelvis: Vector3<f64>, hand: Vector3<f64>) -> Vec<Vector3<f64>> {
    let up = Vector3::z();
    let neck = pelvis + up * 0.50;
    let head = pelvis + up * 0.65;
    // The human faces the robot (toward -x); "right" of the body is +y
    // when facing -x from a pelvis on the +x side.
    let right = Vector3::new(0.0, 1.0, 0.0);
    let l_shoulder = neck - right * 0.20;
    let r_shoulder = neck + right * 0.20;
    let l_elbow = l_shoulder - right * 0.05 - up * 0.28;
    let l_wrist = l_elbow - up * 0.25;
    let l_hand = l_wrist - up * 0.08;
    // Right arm: elbow bows outward between shoulder and hand.
    let r_elbow = lerp(r_shoulder, hand, 0.45) + right * 0.08;
    let r_wrist = lerp(r_shoulder, hand, 0.85);
    let l_hip = pelvis - right * 0.12 - up * 0.05;
    let r_hip = pelvis + right * 0.12 - up * 0.05;
    let l_knee = l_hip - up * 0.42;
    let r_knee = r_hip - up * 0.42;
    let l_ankle = l_knee - up * 0.40;
    let r_ankle = r_knee - up * 0.40;
    let l_foot = l_ankle + Vector3::new(-0.10, 0.0, -0.05);
    let r_foot = r_ankle + Vector3::new(-0.10, 0.0, -0.05);

    let mut joints = vec![pelvis; SKELETON_JOINTS];
    joints[0] = pelvis;
    joints[1] = pelvis + up * 0.17; // spine navel
    joints[2] = pelvis + up * 0.34; // spine chest
    joints[3] = neck;
    joints[4] = head;
    joints[5] = l_shoulder;
    joints[6] = l_elbow;
    joints[7] = l_wrist;
    joints[8] = l_hand;
    joints[9] = r_shoulder;
    joints[10] = r_elbow;
    joints[11] = r_wrist;
    joints[RIGHT_HAND_JOINT] = hand;
    joints[13] = l_hip;
    joints[14] = l_knee;
    joints[15] = l_ankle;
    joints[16] = l_foot;
    joints[17] = r_hip;
    joints[18] = r_knee;
    joints[19] = r_ankle;
    joints[20] = r_foot;
    // Remaining indices (21..) hold at the pelvis.
    joints
}
