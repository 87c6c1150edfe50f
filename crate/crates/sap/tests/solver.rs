use nalgebra::DVector;

use sap::solver::{panoc, penalty_solve, Bounds, LiftedProblem, SolverConfig, SolverStatus};

#[test]
fn bounds_projection() {
    let b = Bounds::symmetric(3, 1.0);
    let mut u = DVector::from_vec(vec![2.0, -5.0, 0.3]);
    b.project(&mut u);
    assert_eq!(u, DVector::from_vec(vec![1.0, -1.0, 0.3]));
    assert!(Bounds::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.0])).is_err());
}

/// Quadratic with the unconstrained minimum outside the box: the solution is
/// the projection of the target onto the box.
#[test]
fn box_constrained_quadratic() {
    let target = DVector::from_vec(vec![3.0, -0.5, 10.0]);
    let mut f = |u: &DVector<f64>, g: &mut DVector<f64>| {
        let d = u - &target;
        g.copy_from(&(2.0 * &d));
        d.norm_squared()
    };
    let bounds = Bounds::symmetric(3, 1.0);
    let r = panoc(&mut f, &bounds, DVector::zeros(3), 1e-8, 200, 5);
    assert!(r.converged, "fpr {}", r.fpr_norm);
    let expect = DVector::from_vec(vec![1.0, -0.5, 1.0]);
    assert!((r.u - expect).amax() < 1e-6);
}

#[test]
fn rosenbrock_converges_to_global_minimum() {
    let mut f = |u: &DVector<f64>, g: &mut DVector<f64>| {
        let (x, y) = (u[0], u[1]);
        g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
        g[1] = 200.0 * (y - x * x);
        (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
    };
    let bounds = Bounds::symmetric(2, 5.0);
    let u0 = DVector::from_vec(vec![-1.2, 1.0]);
    let r = panoc(&mut f, &bounds, u0, 1e-5, 5000, 10);
    assert!(r.converged, "fpr {} after {} iters", r.fpr_norm, r.iters);
    assert!((r.u[0] - 1.0).abs() < 1e-3 && (r.u[1] - 1.0).abs() < 1e-3);
}

#[test]
fn iteration_cap_reported() {
    let mut f = |u: &DVector<f64>, g: &mut DVector<f64>| {
        let (x, y) = (u[0], u[1]);
        g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
        g[1] = 200.0 * (y - x * x);
        (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
    };
    let bounds = Bounds::symmetric(2, 5.0);
    let r = panoc(&mut f, &bounds, DVector::from_vec(vec![-1.2, 1.0]), 1e-10, 3, 10);
    assert!(!r.converged);
    assert_eq!(r.iters, 3);
}

/// min (u1-2)^2 + (u2-2)^2 s.t. u1 + u2 = 2. The quadratic-penalty iterate
/// has the closed form u1 = u2 = (2 + 2c) / (1 + 2c), so the outer loop must
/// drive the residual 2 / (1 + 2c) under eps_b and land near (1, 1).
#[test]
fn penalty_equality_constraint() {
    let mut problem = LiftedProblem {
        psi: |u: &DVector<f64>, c: f64, g: &mut DVector<f64>| {
            let viol = u[0] + u[1] - 2.0;
            g[0] = 2.0 * (u[0] - 2.0) + 2.0 * c * viol;
            g[1] = 2.0 * (u[1] - 2.0) + 2.0 * c * viol;
            (u[0] - 2.0).powi(2) + (u[1] - 2.0).powi(2) + c * viol * viol
        },
        infeasibility: |u: &DVector<f64>| (u[0] + u[1] - 2.0).abs(),
    };
    let cfg = SolverConfig {
        eps_a: 1e-6,
        ..SolverConfig::default()
    };
    let bounds = Bounds::symmetric(2, 10.0);
    let out = penalty_solve(&mut problem, &bounds, DVector::zeros(2), &cfg);
    assert_eq!(out.status, SolverStatus::Converged);
    assert!(out.infeasibility <= cfg.eps_b, "infeas {}", out.infeasibility);
    assert!((out.u[0] - 1.0).abs() < 1e-3 && (out.u[1] - 1.0).abs() < 1e-3);
    // Matches the closed-form penalty iterate at the final weight.
    let t = (2.0 + 2.0 * out.penalty) / (1.0 + 2.0 * out.penalty);
    assert!((out.u[0] - t).abs() < 1e-4, "u {} vs analytic {t}", out.u[0]);
    assert!(out.outer_iters >= 2, "penalty must have grown at least once");
}

#[test]
fn penalty_reports_infeasible_constraints() {
    let mut problem = LiftedProblem {
        psi: |u: &DVector<f64>, c: f64, g: &mut DVector<f64>| {
            // Constraint u^2 + 1 = 0 has no real solution.
            let viol = u[0] * u[0] + 1.0;
            g[0] = 2.0 * u[0] + c * 2.0 * viol * 2.0 * u[0];
            u[0] * u[0] + c * viol * viol
        },
        infeasibility: |u: &DVector<f64>| u[0] * u[0] + 1.0,
    };
    let cfg = SolverConfig::default();
    let bounds = Bounds::symmetric(1, 5.0);
    let out = penalty_solve(&mut problem, &bounds, DVector::from_vec(vec![1.0]), &cfg);
    assert_eq!(out.status, SolverStatus::Infeasible);
    assert!(out.infeasibility > cfg.eps_b);
    // The loop may exit early once infeasibility stagnates, but it must
    // have escalated at least once and never exceed the cap.
    assert!(out.outer_iters >= 2 && out.outer_iters <= cfg.max_outer);
}
