//! Kinematic and dynamic model of an n-DOF serial manipulator.
//!
//! Covers forward kinematics, geometric Jacobians and their time
//! derivatives, joint-space dynamics via the composite-rigid-body and
//! recursive Newton-Euler algorithms, the task-space (Cartesian)
//! counterparts used by the low-level controller, and damped least-squares
//! inverse kinematics.

mod chain;
mod ik;
mod kinematics;
mod rnea;
mod terms;

pub use chain::{KinematicChain, LinkParam};
pub use ik::{inverse_kinematics, inverse_kinematics_best_effort};
pub use kinematics::FkPass;
pub use rnea::{coriolis_matrix, coriolis_vector, crba, gravity_vector, rnea};
pub use terms::{dynamics_terms, DynamicsTerms, DAMPING_MU, SINGULARITY_SIGMA};

use nalgebra::{DVector, UnitQuaternion, Vector3};

use crate::{Result, SapError};

/// Joint-space state `[q, qdot]` of the arm.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Result<Self> {
        if q.len() != qd.len() {
            return Err(SapError::Argument(format!(
                "joint state length mismatch: q has {}, qd has {}",
                q.len(),
                qd.len()
            )));
        }
        if q.iter().chain(qd.iter()).any(|v| !v.is_finite()) {
            return Err(SapError::Argument("non-finite joint state".into()));
        }
        Ok(Self { q, qd })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: DVector::zeros(n),
            qd: DVector::zeros(n),
        }
    }
}

/// Cartesian end-effector state: position, orientation and linear velocity.
#[derive(Debug, Clone)]
pub struct TaskState {
    pub x: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub xd: Vector3<f64>,
}

/// End-effector pose and velocity from joint positions.
///
/// The returned velocity is zero; use [`FkPass`] when velocities are needed.
pub fn forward_kinematics(chain: &KinematicChain, q: &DVector<f64>) -> Result<TaskState> {
    if q.len() != chain.n() {
        return Err(SapError::Argument(format!(
            "expected {} joint values, got {}",
            chain.n(),
            q.len()
        )));
    }
    let pass = FkPass::positions(chain, q);
    Ok(TaskState {
        x: pass.ee_position(),
        orientation: pass.ee_orientation(),
        xd: Vector3::zeros(),
    })
}

/// 3xn position Jacobian of the end-effector.
pub fn jacobian(chain: &KinematicChain, q: &DVector<f64>) -> Result<nalgebra::DMatrix<f64>> {
    if q.len() != chain.n() {
        return Err(SapError::Argument(format!(
            "expected {} joint values, got {}",
            chain.n(),
            q.len()
        )));
    }
    let pass = FkPass::positions(chain, q);
    Ok(pass.position_jacobian(chain.n(), &pass.ee_position()))
}

/// Orientation error between two orientations as the vector part of
/// `desired^-1 * actual`; zero iff the orientations coincide.
pub fn orientation_error(
    desired: &UnitQuaternion<f64>,
    actual: &UnitQuaternion<f64>,
) -> Vector3<f64> {
    let e = desired.inverse() * actual;
    // Keep the error continuous across the double cover.
    let v = e.vector().into_owned();
    if e.scalar() < 0.0 {
        -v
    } else {
        v
    }
}
