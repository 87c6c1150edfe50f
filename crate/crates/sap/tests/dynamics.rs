use approx::assert_relative_eq;
use nalgebra::{DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sap::dynamics::{
    dynamics_terms, forward_kinematics, inverse_kinematics, jacobian, rnea, FkPass, JointState,
    KinematicChain, TaskState,
};

fn data(file: &str) -> String {
    format!("{}/../../data/{}", env!("CARGO_MANIFEST_DIR"), file)
}

fn planar() -> KinematicChain {
    KinematicChain::from_file(data("robots/planar_2link.txt"))
        .unwrap()
        .with_gravity(Vector3::zeros())
}

fn reference() -> KinematicChain {
    KinematicChain::from_file(data("robots/reference_arm.txt")).unwrap()
}

fn spatial3() -> KinematicChain {
    KinematicChain::from_file(data("robots/spatial_3dof.txt")).unwrap()
}

fn random_q(chain: &KinematicChain, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_iterator(
        chain.n(),
        chain
            .links()
            .iter()
            .map(|l| rng.gen_range(l.q_min.max(-2.0)..l.q_max.min(2.0))),
    )
}

#[test]
fn fk_planar_extended() {
    let chain = planar();
    let ts = forward_kinematics(&chain, &DVector::from_vec(vec![0.0, 0.0])).unwrap();
    assert_relative_eq!(ts.x, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
}

#[test]
fn fk_planar_rotated() {
    let chain = planar();
    let q = DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]);
    let ts = forward_kinematics(&chain, &q).unwrap();
    assert_relative_eq!(ts.x, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
}

#[test]
fn fk_dimension_mismatch() {
    let chain = planar();
    assert!(forward_kinematics(&chain, &DVector::zeros(3)).is_err());
}

/// Independent oracle: compose the same joint transforms with nalgebra
/// isometries instead of the FkPass recursion.
fn fk_oracle(chain: &KinematicChain, q: &DVector<f64>) -> Vector3<f64> {
    let mut t = Isometry3::identity();
    for (i, link) in chain.links().iter().enumerate() {
        let rot_z = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), link.theta_off + q[i]);
        let rot_x = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), link.alpha);
        t = t * Isometry3::from_parts(Translation3::identity(), rot_z)
            * Isometry3::from_parts(Translation3::new(link.a, 0.0, link.d), rot_x);
    }
    t.translation.vector
}

#[test]
fn fk_matches_transform_composition_oracle() {
    let chain = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let q = random_q(&chain, &mut rng);
        let ts = forward_kinematics(&chain, &q).unwrap();
        assert_relative_eq!(ts.x, fk_oracle(&chain, &q), epsilon = 1e-12);
    }
}

#[test]
fn jacobian_planar_base_column() {
    let chain = planar();
    let j = jacobian(&chain, &DVector::zeros(2)).unwrap();
    assert_relative_eq!(j[(0, 0)], 0.0, epsilon = 1e-12);
    assert_relative_eq!(j[(1, 0)], 1.0, epsilon = 1e-12);
    assert_relative_eq!(j[(2, 0)], 0.0, epsilon = 1e-12);
}

#[test]
fn jacobian_matches_finite_differences() {
    let chain = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let eps = 1e-6;
    for _ in 0..20 {
        let q = random_q(&chain, &mut rng);
        let j = jacobian(&chain, &q).unwrap();
        for col in 0..chain.n() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[col] += eps;
            qm[col] -= eps;
            let fd = (forward_kinematics(&chain, &qp).unwrap().x
                - forward_kinematics(&chain, &qm).unwrap().x)
                / (2.0 * eps);
            let err = (fd - j.column(col)).norm() / fd.norm().max(1.0);
            assert!(err < 1e-5, "column {col} rel error {err}");
        }
    }
}

#[test]
fn singular_pose_flags_damped_pinv() {
    let chain = planar();
    // Fully extended planar arm: the Jacobian loses rank in-plane only for
    // radial motion; out-of-plane rows are structurally zero, so sigma_min
    // is already tiny.
    let s = JointState::new(DVector::zeros(2), DVector::zeros(2)).unwrap();
    let terms = dynamics_terms(&chain, &s).unwrap();
    let svd = terms.j.clone().svd(false, false);
    let sigma_min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(sigma_min < 1e-3);
    assert!(terms.near_singular);
    // Damped pinv stays finite.
    assert!(terms.jdag.iter().all(|v| v.is_finite()));
}

#[test]
fn gravity_matches_potential_gradient() {
    let chain = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let potential = |q: &DVector<f64>| -> f64 {
        let pass = FkPass::positions(&chain, q);
        chain
            .links()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let c = pass.origin[i + 1] + pass.rot[i + 1] * l.com;
                -l.mass * chain.gravity().dot(&c)
            })
            .sum()
    };
    for _ in 0..10 {
        let q = random_q(&chain, &mut rng);
        let s = JointState::new(q.clone(), DVector::zeros(7)).unwrap();
        let terms = dynamics_terms(&chain, &s).unwrap();
        let eps = 1e-6;
        for k in 0..7 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += eps;
            qm[k] -= eps;
            let fd = (potential(&qp) - potential(&qm)) / (2.0 * eps);
            let rel = (terms.g[k] - fd).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-5, "joint {k}: g={} fd={fd}", terms.g[k]);
        }
    }
}

#[test]
fn mass_matrix_matches_rnea_columns() {
    
    let chain = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..10 {
        let q = random_q(&chain, &mut rng);
        let qd = DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
        let s = JointState::new(q.clone(), qd).unwrap();
        let terms = dynamics_terms(&chain, &s).unwrap();
        let g = rnea(&chain, &q, &DVector::zeros(7), &DVector::zeros(7));
        for col in 0..7 {
            let mut e = DVector::zeros(7);
            e[col] = 1.0;
            let m_col = rnea(&chain, &q, &DVector::zeros(7), &e) - &g;
            let err = (terms.m.column(col) - &m_col).amax();
            assert!(err < 1e-10, "column {col} abs err {err}");
        }
    }
}

#[test]
fn coriolis_matrix_is_consistent() {
    let chain = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..5 {
        let q = random_q(&chain, &mut rng);
        let qd = DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
        let s = JointState::new(q.clone(), qd.clone()).unwrap();
        let terms = dynamics_terms(&chain, &s).unwrap();
        let cvec = sap::dynamics::rnea(&chain, &q, &qd, &DVector::zeros(7))
            - sap::dynamics::rnea(&chain, &q, &DVector::zeros(7), &DVector::zeros(7));
        let err = (&terms.c * &qd - cvec).amax();
        assert!(err < 1e-6, "C*qd mismatch {err}");
    }
}

/// Property 2: Mx_dot - 2 Cx skew-symmetric, with Mx_dot by central
/// differences along the joint flow. Exact only for a square Jacobian, so
/// checked on the 3-DOF spatial chain. The damped pseudo-inverse perturbs
/// the identity by O(mu / sigma_min^4), so the tight check rebuilds the
/// task-space terms with the exact inverse and the damped route is only
/// required to degrade gracefully at well-conditioned configurations.
#[test]
fn task_space_skew_symmetry() {
    let chain = spatial3();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut exact_checked = 0;
    let mut damped_checked = 0;
    for _ in 0..40 {
        let q = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let qd = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let dt = 1e-6;
        let term = |qq: &DVector<f64>| {
            dynamics_terms(&chain, &JointState::new(qq.clone(), qd.clone()).unwrap()).unwrap()
        };
        let terms = term(&q);
        if terms.near_singular {
            continue;
        }
        // Exact-inverse route: Mx = J^-T M J^-1, Cx = J^-T (C - M J^-1 Jdot) J^-1.
        let mx_exact = |t: &sap::dynamics::DynamicsTerms| {
            let jsq = nalgebra::Matrix3::from_iterator(t.j.iter().copied());
            let jinv = jsq.try_inverse().unwrap();
            (
                jinv.transpose()
                    * nalgebra::Matrix3::from_iterator(t.m.iter().copied())
                    * jinv,
                jinv,
            )
        };
        let (mx0, jinv) = mx_exact(&terms);
        let _ = mx0;
        let cx_exact = jinv.transpose()
            * nalgebra::Matrix3::from_iterator(
                (&terms.c - &terms.m * nalgebra::DMatrix::from_iterator(3, 3, jinv.iter().copied()) * &terms.jdot)
                    .iter()
                    .copied(),
            )
            * jinv;
        let mx_dot_exact =
            (mx_exact(&term(&(q.clone() + &qd * dt))).0 - mx_exact(&term(&(q.clone() - &qd * dt))).0) / (2.0 * dt);
        let s = mx_dot_exact - 2.0 * cx_exact;
        let resid = (s + s.transpose()).norm();
        // Finite-difference noise scales with the task-space inertia, which
        // blows up near singular configurations.
        let tol = 1e-7 * (1.0 + mx_dot_exact.norm() + cx_exact.norm());
        assert!(resid < tol, "exact-inverse skew residual {resid} > {tol}");
        exact_checked += 1;

        let sigma_min = terms
            .j
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if sigma_min > 0.1 {
            let mx_plus = term(&(q.clone() + &qd * dt)).mx;
            let mx_minus = term(&(q.clone() - &qd * dt)).mx;
            let mx_dot = (mx_plus - mx_minus) / (2.0 * dt);
            let s = mx_dot - 2.0 * terms.cx;
            let resid = (s + s.transpose()).norm();
            // Damping perturbs the identity by O(mu / sigma_min^4).
            let tol = 1e-6 + 10.0 * 1e-6 / sigma_min.powi(4);
            assert!(
                resid < tol,
                "damped skew residual {resid} > {tol} at sigma {sigma_min}"
            );
            damped_checked += 1;
        }
    }
    assert!(exact_checked >= 20, "only {exact_checked} exact checks ran");
    assert!(damped_checked >= 5, "only {damped_checked} damped checks ran");
}

#[test]
fn mass_matrix_positive_definite_sampled() {
    let chain = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..500 {
        let q = random_q(&chain, &mut rng);
        let s = JointState::new(q, DVector::zeros(7)).unwrap();
        let terms = dynamics_terms(&chain, &s).unwrap();
        let min_eig = terms
            .m
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig > 0.0, "min eigenvalue {min_eig}");
    }
}

/// For the damped pseudo-inverse, J Jdag = I - mu (J J^T + mu I)^-1 exactly,
/// so the residual's spectral norm must equal mu / (sigma_min^2 + mu).
#[test]
fn pseudo_inverse_identity_away_from_singularity() {
    let chain = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut checked = 0;
    for _ in 0..50 {
        let q = random_q(&chain, &mut rng);
        let s = JointState::new(q, DVector::zeros(7)).unwrap();
        let terms = dynamics_terms(&chain, &s).unwrap();
        if terms.near_singular {
            continue;
        }
        let sigma_min = terms
            .j
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        let resid = &terms.j * &terms.jdag - nalgebra::DMatrix::identity(3, 3);
        let bound = 1e-6 / (sigma_min * sigma_min + 1e-6);
        let err = resid.amax();
        assert!(
            err <= 1.01 * bound + 1e-12,
            "J * Jdag residual {err} exceeds damping bound {bound}"
        );
        if sigma_min > 0.15 {
            assert!(err < 1e-4, "J * Jdag != I: {err} at sigma {sigma_min}");
        }
        checked += 1;
    }
    assert!(checked > 30);
}

#[test]
fn jdot_matches_finite_differences() {
    let chain = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let q = random_q(&chain, &mut rng);
        let qd = DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
        let s = JointState::new(q.clone(), qd.clone()).unwrap();
        let terms = dynamics_terms(&chain, &s).unwrap();
        let dt = 1e-6;
        let j_plus = jacobian(&chain, &(q.clone() + &qd * dt)).unwrap();
        let j_minus = jacobian(&chain, &(q.clone() - &qd * dt)).unwrap();
        let fd = (j_plus - j_minus) / (2.0 * dt);
        let err = (&terms.jdot - fd).amax();
        assert!(err < 1e-5, "Jdot mismatch {err}");
    }
}

/// Applying tau = J^T f in joint space and f in task space must produce the
/// same end-effector acceleration (square Jacobian chain).
#[test]
fn task_joint_space_equivalence() {
    let chain = spatial3();
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let mut checked = 0;
    for _ in 0..40 {
        let q = DVector::from_fn(3, |_, _| rng.gen_range(-1.2..1.2));
        let qd = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let s = JointState::new(q.clone(), qd.clone()).unwrap();
        let terms = dynamics_terms(&chain, &s).unwrap();
        if terms.near_singular {
            continue;
        }
        let f = Vector3::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        );
        // Joint space: qdd = M^-1 (J^T f - C qd - g), xdd = J qdd + Jdot qd.
        let tau = terms.j.transpose() * f;
        let qdd = terms
            .m
            .clone()
            .lu()
            .solve(&(tau - &terms.c * &qd - &terms.g))
            .unwrap();
        let xdd_joint = &terms.j * qdd + &terms.jdot * &qd;
        let xd = &terms.j * &qd;
        let xd3 = Vector3::new(xd[0], xd[1], xd[2]);

        // Exact-inverse task-space terms: identity holds at linear-algebra
        // precision regardless of conditioning.
        let jsq = nalgebra::Matrix3::from_iterator(terms.j.iter().copied());
        let jinv = jsq.try_inverse().unwrap();
        let m3 = nalgebra::Matrix3::from_iterator(terms.m.iter().copied());
        let mx = jinv.transpose() * m3 * jinv;
        let cx = jinv.transpose()
            * nalgebra::Matrix3::from_iterator(
                (&terms.c
                    - &terms.m
                        * nalgebra::DMatrix::from_iterator(3, 3, jinv.iter().copied())
                        * &terms.jdot)
                    .iter()
                    .copied(),
            )
            * jinv;
        let gx = jinv.transpose()
            * Vector3::new(terms.g[0], terms.g[1], terms.g[2]);
        let xdd_task = mx.try_inverse().unwrap() * (f - cx * xd3 - gx);
        let scale = 1.0 + xdd_joint.amax();
        for k in 0..3 {
            assert!(
                (xdd_joint[k] - xdd_task[k]).abs() < 1e-6 * scale,
                "axis {k}: joint {} task {}",
                xdd_joint[k],
                xdd_task[k]
            );
        }
        checked += 1;

        // Damped route stays close at well-conditioned configurations.
        let sigma_min = terms
            .j
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if sigma_min > 0.1 {
            let rhs = f - terms.cx * xd3 - terms.gx;
            let xdd_damped = terms.mx.try_inverse().unwrap() * rhs;
            let tol = (1e-6 + 10.0 * 1e-6 / sigma_min.powi(4)) * scale;
            for k in 0..3 {
                assert!(
                    (xdd_joint[k] - xdd_damped[k]).abs() < tol,
                    "axis {k}: joint {} damped {} tol {tol}",
                    xdd_joint[k],
                    xdd_damped[k]
                );
            }
        }
    }
    assert!(checked >= 10, "only {checked} samples checked");
}

#[test]
fn ik_fixed_point() {
    let chain = reference();
    let q0 = DVector::from_vec(vec![0.3, -0.4, 0.2, 0.9, -0.1, 0.5, 0.2]);
    let target = forward_kinematics(&chain, &q0).unwrap();
    let q = inverse_kinematics(&chain, &target, &q0).unwrap();
    assert_relative_eq!(q, q0, epsilon = 1e-9);
}

#[test]
fn ik_round_trip_from_perturbed_seed() {
    let chain = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(222);
    for _ in 0..10 {
        let q0 = random_q(&chain, &mut rng);
        let target = forward_kinematics(&chain, &q0).unwrap();
        let seed = &q0 + DVector::from_fn(7, |_, _| rng.gen_range(-0.1..0.1));
        let q = inverse_kinematics(&chain, &target, &seed).unwrap();
        let reached = forward_kinematics(&chain, &q).unwrap();
        assert!((reached.x - target.x).norm() < 1e-4);
    }
}

#[test]
fn ik_unreachable_target() {
    let chain = planar();
    let target = TaskState {
        x: Vector3::new(10.0, 0.0, 0.0),
        orientation: UnitQuaternion::identity(),
        xd: Vector3::zeros(),
    };
    let err = inverse_kinematics(&chain, &target, &DVector::zeros(2)).unwrap_err();
    match err {
        sap::SapError::Unreachable { residual, .. } => assert!(residual > 8.0),
        other => panic!("expected unreachable error, got {other}"),
    }
}
