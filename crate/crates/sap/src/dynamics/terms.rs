use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::chain::KinematicChain;
use super::kinematics::FkPass;
use super::rnea::{coriolis_matrix, crba, gravity_vector};
use super::JointState;
use crate::Result;

/// Damping constant for the pseudo-inverse `(J^T J + mu I)^-1 J^T`.
pub const DAMPING_MU: f64 = 1e-6;
/// Smallest-singular-value threshold below which the singularity flag is set.
pub const SINGULARITY_SIGMA: f64 = 1e-3;

/// Joint- and task-space dynamics terms at one state.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    /// Joint-space inertia matrix, n x n.
    pub m: DMatrix<f64>,
    /// Coriolis/centrifugal matrix, n x n (Christoffel form).
    pub c: DMatrix<f64>,
    /// Gravity torque vector, n.
    pub g: DVector<f64>,
    /// Task-space inertia, 3 x 3.
    pub mx: Matrix3<f64>,
    /// Task-space Coriolis matrix, 3 x 3.
    pub cx: Matrix3<f64>,
    /// Task-space gravity force, 3.
    pub gx: Vector3<f64>,
    /// End-effector position Jacobian, 3 x n.
    pub j: DMatrix<f64>,
    /// Damped pseudo-inverse of `j`, n x 3.
    pub jdag: DMatrix<f64>,
    /// Time derivative of `j`, 3 x n.
    pub jdot: DMatrix<f64>,
    /// Set when the smallest singular value of `j` fell below the threshold.
    pub near_singular: bool,
}

/// Damped least-squares pseudo-inverse `J^T (J J^T + mu I)^-1` together with
/// the near-singularity flag.
pub fn damped_pinv(j: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let jjt = j * j.transpose() + Matrix3::identity().scale(DAMPING_MU);
    let jjt3 = Matrix3::from_iterator(jjt.iter().copied());
    let inv = jjt3.try_inverse().expect("damped Gram matrix is invertible");
    let jdag = j.transpose() * DMatrix::from_iterator(3, 3, inv.iter().copied());
    let sigma_min = j
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    (jdag, sigma_min < SINGULARITY_SIGMA)
}

/// All kinematic/dynamic terms needed by the controllers at state `s`.
pub fn dynamics_terms(chain: &KinematicChain, s: &JointState) -> Result<DynamicsTerms> {
    let n = chain.n();
    if s.q.len() != n {
        return Err(crate::SapError::Argument(format!(
            "expected {} joints, got {}",
            n,
            s.q.len()
        )));
    }
    let pass = FkPass::positions(chain, &s.q).with_velocities(&s.qd);
    let j = pass.position_jacobian(n, &pass.ee_position());
    let jdot = pass.ee_jacobian_dot();
    let (jdag, near_singular) = damped_pinv(&j);

    let m = crba(chain, &s.q);
    let c = coriolis_matrix(chain, &s.q, &s.qd);
    let g = gravity_vector(chain, &s.q);

    let mx_d = jdag.transpose() * &m * &jdag;
    let cx_d = jdag.transpose() * (&c - &m * &jdag * &jdot) * &jdag;
    let gx_d = jdag.transpose() * &g;

    Ok(DynamicsTerms {
        mx: Matrix3::from_iterator(mx_d.iter().copied()),
        cx: Matrix3::from_iterator(cx_d.iter().copied()),
        gx: Vector3::new(gx_d[0], gx_d[1], gx_d[2]),
        m,
        c,
        g,
        j,
        jdag,
        jdot,
        near_singular,
    })
}
