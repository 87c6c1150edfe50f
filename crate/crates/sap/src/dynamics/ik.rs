use nalgebra::{DMatrix, DVector, Matrix6, UnitQuaternion, Vector3, Vector6};

use super::chain::KinematicChain;
use super::kinematics::FkPass;
use super::TaskState;
use crate::{Result, SapError};

const POS_TOL: f64 = 1e-4;
const ORI_TOL: f64 = 1e-3;
const MAX_ITERS: usize = 200;
const DLS_LAMBDA2: f64 = 1e-4;

/// Damped least-squares inverse kinematics from a seed configuration.
///
/// Returns a joint vector whose forward pose matches `target` to 1e-4 m in
/// position and 1e-3 rad in orientation, clamped to the joint limits.
pub fn inverse_kinematics(
    chain: &KinematicChain,
    target: &TaskState,
    seed: &DVector<f64>,
) -> Result<DVector<f64>> {
    let out = solve(chain, target, seed)?;
    match out.converged {
        true => Ok(out.best_q),
        false => Err(SapError::Unreachable {
            residual: out.best_residual,
            iters: MAX_ITERS,
        }),
    }
}

/// Like [`inverse_kinematics`] but never fails on unreachable targets:
/// returns the best configuration found and its position residual, which is
/// the closest approach when the target lies outside the workspace.
pub fn inverse_kinematics_best_effort(
    chain: &KinematicChain,
    target: &TaskState,
    seed: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let out = solve(chain, target, seed)?;
    Ok((out.best_q, out.best_residual))
}

struct IkOutcome {
    best_q: DVector<f64>,
    /// Position residual at `best_q`, m.
    best_residual: f64,
    converged: bool,
}

fn solve(chain: &KinematicChain, target: &TaskState, seed: &DVector<f64>) -> Result<IkOutcome> {
    let n = chain.n();
    if seed.len() != n {
        return Err(SapError::Argument(format!(
            "seed has {} entries, chain has {n} joints",
            seed.len()
        )));
    }
    if seed.iter().any(|v| !v.is_finite()) {
        return Err(SapError::Argument("non-finite IK seed".into()));
    }

    // Per-iteration caps keep the linearization honest; a full Newton step
    // toward a distant pose diverges on a redundant arm.
    const POS_CAP: f64 = 0.05; // m
    const ORI_CAP: f64 = 0.20; // rad
    const STEP_CAP: f64 = 0.30; // rad, inf-norm

    let residual_at = |q: &DVector<f64>| {
        let pass = FkPass::positions(chain, q);
        let pos_err = target.x - pass.ee_position();
        let ori_err = rotation_error(&target.orientation, &pass.ee_orientation());
        (pos_err, ori_err)
    };

    let mut q = seed.clone();
    let mut best_residual = f64::INFINITY;
    let mut best_q = q.clone();
    for _iter in 0..MAX_ITERS {
        let pass = FkPass::positions(chain, &q);
        let pos_err = target.x - pass.ee_position();
        let ori_err = rotation_error(&target.orientation, &pass.ee_orientation());
        let res = pos_err.norm() + 0.3 * ori_err.norm();
        if pos_err.norm() < best_residual {
            best_residual = pos_err.norm();
            best_q = q.clone();
        }
        if pos_err.norm() < POS_TOL && ori_err.norm() < ORI_TOL {
            return Ok(IkOutcome {
                best_residual: pos_err.norm(),
                best_q: q,
                converged: true,
            });
        }

        let jp = pass.position_jacobian(n, &pass.ee_position());
        let jw = pass.angular_jacobian(n);
        let mut jg = DMatrix::zeros(6, n);
        jg.rows_mut(0, 3).copy_from(&jp);
        jg.rows_mut(3, 3).copy_from(&jw);

        let pe = if pos_err.norm() > POS_CAP {
            pos_err * (POS_CAP / pos_err.norm())
        } else {
            pos_err
        };
        let oe = if ori_err.norm() > ORI_CAP {
            ori_err * (ORI_CAP / ori_err.norm())
        } else {
            ori_err
        };
        let err = Vector6::new(pe[0], pe[1], pe[2], oe[0], oe[1], oe[2]);
        // dq = Jg^T (Jg Jg^T + lambda^2 I)^-1 err
        let gram = &jg * jg.transpose() + DMatrix::identity(6, 6).scale(DLS_LAMBDA2);
        let gram6 = Matrix6::from_iterator(gram.iter().copied());
        let sol = gram6
            .lu()
            .solve(&err)
            .ok_or_else(|| SapError::Planner("IK Gram solve failed".into()))?;
        let mut dq = jg.transpose() * DVector::from_iterator(6, sol.iter().copied());
        let step = dq.amax();
        if step > STEP_CAP {
            dq *= STEP_CAP / step;
        }

        // Backtrack if the combined residual got worse.
        let mut scale = 1.0;
        let mut accepted = q.clone();
        for _ in 0..6 {
            let mut trial = &q + &dq * scale;
            chain.clamp_to_limits(&mut trial);
            let (p2, o2) = residual_at(&trial);
            if p2.norm() + 0.3 * o2.norm() < res {
                accepted = trial;
                break;
            }
            scale *= 0.5;
            accepted = trial;
        }
        q = accepted;
    }

    Ok(IkOutcome {
        best_q,
        best_residual,
        converged: false,
    })
}

/// World-frame rotation vector driving `actual` toward `desired`.
fn rotation_error(desired: &UnitQuaternion<f64>, actual: &UnitQuaternion<f64>) -> Vector3<f64> {
    let e = desired * actual.inverse();
    let v = e.vector().into_owned();
    let w = e.scalar();
    let sign = if w < 0.0 { -1.0 } else { 1.0 };
    2.0 * sign * v
}
