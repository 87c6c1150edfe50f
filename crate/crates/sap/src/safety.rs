//! Low-level task-space controller and safety filter: nominal force from a
//! sliding-mode-style tracking law, exponential barrier constraint rows per
//! robot link, an optional Lyapunov (convergence) row near the goal, and a
//! small dense QP that minimally modifies the nominal force to satisfy them.

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, Vector3};

use crate::dynamics::{
    coriolis_vector, crba, gravity_vector, DynamicsTerms, FkPass, KinematicChain,
};
use crate::geometry::{link_min_distance, robot_link_capsules, HumanModel};
use crate::{Result, SapError};

/// Gains of the low-level force controller.
#[derive(Debug, Clone)]
pub struct LowLevelGains {
    /// Composite-error gain (> 0): z = xd_err + lambda * x_err.
    pub lambda: f64,
    /// Switching gain (N).
    pub k_z: f64,
    /// Smoothing constant replacing the sign function.
    pub c1: f64,
    /// Symmetric positive definite damping matrix for the convergence row.
    pub k_d: Matrix3<f64>,
}

impl LowLevelGains {
    pub fn reference() -> Self {
        Self {
            lambda: 2.0,
            k_z: 5.0,
            c1: 0.01,
            k_d: Matrix3::from_diagonal(&Vector3::new(5.0, 5.0, 5.0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.k_z > 0.0 && self.c1 > 0.0) {
            return Err(SapError::Argument(
                "low-level gains lambda, k_z, c1 must be positive".into(),
            ));
        }
        let eig = self.k_d.symmetric_eigenvalues();
        if eig.iter().any(|&e| e <= 0.0) {
            return Err(SapError::Argument("K_D must be positive definite".into()));
        }
        Ok(())
    }
}

/// Composite tracking error z = (xd - xd_d) + lambda * (x - x_d).
pub fn composite_error(
    x: &Vector3<f64>,
    xd: &Vector3<f64>,
    x_d: &Vector3<f64>,
    xd_d: &Vector3<f64>,
    gains: &LowLevelGains,
) -> Vector3<f64> {
    (xd - xd_d) + gains.lambda * (x - x_d)
}

/// Smoothed switching term -k_z * z / (||z|| + c1).
pub fn switching_term(z: &Vector3<f64>, gains: &LowLevelGains) -> Vector3<f64> {
    -gains.k_z * z / (z.norm() + gains.c1)
}

/// Nominal task-space force: feedforward of the reference through the
/// task-space dynamics plus a smoothed sliding term on the composite error.
#[allow(clippy::too_many_arguments)]
pub fn nominal_force(
    terms: &DynamicsTerms,
    x: &Vector3<f64>,
    xd: &Vector3<f64>,
    x_d: &Vector3<f64>,
    xd_d: &Vector3<f64>,
    xdd_d: &Vector3<f64>,
    gains: &LowLevelGains,
) -> Vector3<f64> {
    let x_err = x - x_d;
    let xd_err = xd - xd_d;
    let z = xd_err + gains.lambda * x_err;
    terms.cx * (xd_d - gains.lambda * x_err)
        + terms.gx
        + terms.mx * (xdd_d - gains.lambda * xd_err)
        + switching_term(&z, gains)
}

/// Outward witness-point acceleration demanded while a link pair is in
/// contact or penetrating, m/s^2. Used by the escape rows that replace the
/// regular barrier rows in that regime.
pub const ESCAPE_ACC: f64 = 2.0;

/// One barrier constraint: lg_lf_h * u_act >= -(k1*h + k2*lf_h + lf2_h).
#[derive(Debug, Clone)]
pub struct BarrierRow {
    /// Robot link capsule index (0-based).
    pub link: usize,
    /// Barrier value, m^2.
    pub h: f64,
    /// First Lie derivative (h-dot along the drift).
    pub lf_h: f64,
    /// Input-independent part of h-ddot.
    pub lf2_h: f64,
    /// Row mapping u_act to its h-ddot contribution.
    pub lg_lf_h: RowVector3<f64>,
    pub k1: f64,
    pub k2: f64,
    /// Set when the pair is in contact or penetrating. The row then demands
    /// outward escape acceleration along the core normal, or is vacuous when
    /// the cores intersect and no direction is defined.
    pub penetration: bool,
}

impl BarrierRow {
    /// Half-space form a^T u >= b.
    pub fn halfspace(&self) -> (Vector3<f64>, f64) {
        (
            self.lg_lf_h.transpose(),
            -(self.k1 * self.h + self.k2 * self.lf_h + self.lf2_h),
        )
    }
}

/// Estimates the human-side witness point velocities by first differences
/// across predictor frames (20 Hz). Owned by the control loop; rates are
/// zero until two distinct frames have been seen.
#[derive(Debug, Clone)]
pub struct WitnessTracker {
    frame_dt: f64,
    last_frame: Option<u64>,
    prev: Vec<Option<Vector3<f64>>>,
    rates: Vec<Vector3<f64>>,
}

impl WitnessTracker {
    pub fn new(n_links: usize, frame_dt: f64) -> Self {
        Self {
            frame_dt,
            last_frame: None,
            prev: vec![None; n_links],
            rates: vec![Vector3::zeros(); n_links],
        }
    }

    /// Feeds the current witness points; differencing only happens when the
    /// predictor frame index advances, otherwise the held rates are reused.
    fn update(&mut self, frame: u64, witnesses: &[Vector3<f64>]) {
        if self.last_frame == Some(frame) {
            return;
        }
        for (i, w) in witnesses.iter().enumerate() {
            self.rates[i] = match self.prev[i] {
                Some(p) if self.last_frame.is_some() => (w - p) / self.frame_dt,
                _ => Vector3::zeros(),
            };
            self.prev[i] = Some(*w);
        }
        self.last_frame = Some(frame);
    }

    pub fn rate(&self, link: usize) -> Vector3<f64> {
        self.rates[link]
    }
}

/// Barrier rows for every robot link against the current human model.
///
/// h_i = lambda_i^2 - d_safe^2 with lambda_i the signed link clearance, so
/// h_i >= 0 exactly when the link keeps the safety margin. Lie derivatives
/// are taken along the actual joint-space plant M qdd + C qd + g = J^T u_act,
/// which coincides with the task-space form whenever J is invertible.
#[allow(clippy::too_many_arguments)]
pub fn barrier_rows(
    chain: &KinematicChain,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    human: &HumanModel,
    link_radii: &[f64],
    d_safe: f64,
    k_b: [f64; 2],
    tracker: &mut WitnessTracker,
    frame: u64,
    tau_ff: Option<&DVector<f64>>,
) -> Result<Vec<BarrierRow>> {
    let n = chain.n();
    let caps = robot_link_capsules(chain, q, link_radii)?;
    let pass = FkPass::positions(chain, q).with_velocities(qd).with_accelerations(
        qd,
        &DVector::zeros(n),
        Vector3::zeros(),
    );

    // Distance witnesses per link, then the human-side velocity estimates.
    let results: Vec<_> = caps.iter().map(|c| link_min_distance(c, human)).collect();
    let witnesses: Vec<Vector3<f64>> = results.iter().map(|r| r.p_support).collect();
    tracker.update(frame, &witnesses);

    // Drift acceleration of the joints under zero task-space input:
    // M qdd = tau_ff - C qd - g, where tau_ff is any input-independent
    // feedforward torque the composition applies alongside J^T u.
    let m = crba(chain, q);
    let mut rhs = -(coriolis_vector(chain, q, qd) + gravity_vector(chain, q));
    if let Some(ff) = tau_ff {
        rhs += ff;
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| SapError::Argument("mass matrix not positive definite".into()))?;
    let qdd_drift = chol.solve(&rhs);
    // M^-1 J_ee^T maps the shared task-space force to joint accelerations.
    let minv_jt = chol.solve(&terms_jacobian(&pass, n).transpose());

    let mut rows = Vec::with_capacity(caps.len());
    for (i, r) in results.iter().enumerate() {
        let frame_idx = i + 1;
        if r.lambda <= 1e-9 {
            // Signed square keeps h monotone through contact: at
            // lambda = 0 the barrier sits at its floor -d_safe^2.
            let h = r.lambda * r.lambda.abs() - d_safe * d_safe;
            let core = r.x_witness - r.p_support; // == lambda * n_outward
            if r.lambda.abs() < 1e-12 || core.norm() < 1e-12 {
                // Cores intersect: no direction information; vacuous row.
                rows.push(BarrierRow {
                    link: i,
                    h,
                    lf_h: 0.0,
                    lf2_h: 0.0,
                    lg_lf_h: RowVector3::zeros(),
                    k1: k_b[0],
                    k2: k_b[1],
                    penetration: true,
                });
                continue;
            }
            // Escape row: demand outward witness acceleration of at least
            // ESCAPE_ACC along the (still defined) core normal.
            let n_dir = core / r.lambda;
            let x_dot = pass.point_velocity(frame_idx, &r.x_witness);
            let rel = x_dot - tracker.rate(i);
            let ji = pass.position_jacobian(frame_idx, &r.x_witness);
            let bias = pass.point_bias_acceleration(frame_idx, &r.x_witness);
            let xdd_drift = &ji * &qdd_drift + bias;
            let lg = n_dir.transpose() * (&ji * &minv_jt);
            rows.push(BarrierRow {
                link: i,
                h,
                lf_h: n_dir.dot(&rel),
                lf2_h: n_dir.dot(&xdd_drift) - ESCAPE_ACC,
                lg_lf_h: RowVector3::from_iterator(lg.iter().copied()),
                k1: k_b[0],
                k2: k_b[1],
                penetration: true,
            });
            continue;
        }
        let d = r.x_witness - r.p_support; // ||d|| == lambda
        let h = r.lambda * r.lambda - d_safe * d_safe;
        let x_dot = pass.point_velocity(frame_idx, &r.x_witness);
        let rel = x_dot - tracker.rate(i);
        let lf_h = 2.0 * d.dot(&rel);

        let ji = pass.position_jacobian(frame_idx, &r.x_witness);
        let bias = pass.point_bias_acceleration(frame_idx, &r.x_witness);
        let xdd_drift = &ji * &qdd_drift + bias;
        let lf2_h = 2.0 * rel.norm_squared() + 2.0 * d.dot(&xdd_drift);
        let lg = 2.0 * d.transpose() * (&ji * &minv_jt);

        rows.push(BarrierRow {
            link: i,
            h,
            lf_h,
            lf2_h,
            lg_lf_h: RowVector3::from_iterator(lg.iter().copied()),
            k1: k_b[0],
            k2: k_b[1],
            penetration: false,
        });
    }
    Ok(rows)
}

fn terms_jacobian(pass: &FkPass, n: usize) -> DMatrix<f64> {
    pass.position_jacobian(n, &pass.ee_position())
}

/// Convergence constraint z^T u_act >= z^T K_D z - k_z ||z||^2 / (||z|| + c1).
/// Returns None for z = 0 (the row degenerates to 0 >= 0).
pub fn clf_row(z: &Vector3<f64>, gains: &LowLevelGains) -> Option<(Vector3<f64>, f64)> {
    let zn = z.norm();
    if zn < 1e-12 {
        return None;
    }
    let b = (z.transpose() * gains.k_d * z)[0] - gains.k_z * zn * zn / (zn + gains.c1);
    Some((*z, b))
}

/// The safety QP: minimize ||target - u||^2 subject to half-space rows
/// a^T u >= b and a per-axis box.
#[derive(Debug, Clone)]
pub struct SafetyQp {
    pub target: Vector3<f64>,
    pub rows: Vec<(Vector3<f64>, f64)>,
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
}

impl SafetyQp {
    pub fn new(target: Vector3<f64>, force_limit: f64) -> Self {
        Self {
            target,
            rows: Vec::new(),
            lo: Vector3::from_element(-force_limit),
            hi: Vector3::from_element(force_limit),
        }
    }

    /// All constraints as a^T u >= b, box faces included.
    fn all_constraints(&self) -> Vec<(Vector3<f64>, f64)> {
        let mut cs = self.rows.clone();
        for j in 0..3 {
            let mut e = Vector3::zeros();
            e[j] = 1.0;
            cs.push((e, self.lo[j]));
            cs.push((-e, -self.hi[j]));
        }
        cs
    }

    /// Worst KKT violation of a candidate: primal feasibility plus
    /// stationarity/dual feasibility reconstructed from the active set.
    pub fn kkt_residual(&self, u: &Vector3<f64>) -> f64 {
        let cs = self.all_constraints();
        let mut worst: f64 = 0.0;
        for (a, b) in &cs {
            worst = worst.max(b - a.dot(u));
        }
        // Stationarity: u - target must lie in the cone of active normals.
        // Solve a small nonnegative least-squares by active-set enumeration
        // over the active constraints (at most a handful).
        let active: Vec<&(Vector3<f64>, f64)> = cs
            .iter()
            .filter(|(a, b)| (a.dot(u) - b).abs() <= 1e-6 * (1.0 + b.abs()))
            .collect();
        let g = u - self.target;
        if g.norm() <= 1e-8 {
            return worst;
        }
        let mut best_stat = g.norm();
        let k = active.len();
        for mask in 0u32..(1 << k.min(12)) {
            if mask.count_ones() > 3 {
                continue;
            }
            let sel: Vec<&Vector3<f64>> = (0..k)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| &active[i].0)
                .collect();
            if let Some(res) = cone_residual(&g, &sel) {
                best_stat = best_stat.min(res);
            }
        }
        worst.max(best_stat)
    }
}

/// Distance from g to the span of `normals` with nonnegative coefficients.
fn cone_residual(g: &Vector3<f64>, normals: &[&Vector3<f64>]) -> Option<f64> {
    if normals.is_empty() {
        return Some(g.norm());
    }
    let k = normals.len();
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for i in 0..k {
        rhs[i] = normals[i].dot(g);
        for j in 0..k {
            gram[(i, j)] = normals[i].dot(normals[j]);
        }
    }
    let mu = gram.lu().solve(&rhs)?;
    if mu.iter().any(|&m| m < -1e-8) {
        return None;
    }
    let mut proj = Vector3::zeros();
    for i in 0..k {
        proj += *normals[i] * mu[i];
    }
    Some((g - proj).norm())
}

/// Solves the safety QP by enumerating candidate active sets (the problem
/// has 3 variables and a handful of constraints). Returns the unique KKT
/// point, or an infeasibility error when the rows and box conflict.
pub fn filter(qp: &SafetyQp) -> Result<Vector3<f64>> {
    let cs = qp.all_constraints();
    let m = cs.len();
    let feas_tol = 1e-9;

    // Candidate active sets of size 0..=3, smallest first so the
    // unconstrained optimum (u = target) wins when feasible.
    let mut sets: Vec<Vec<usize>> = vec![vec![]];
    for i in 0..m {
        sets.push(vec![i]);
        for j in (i + 1)..m {
            sets.push(vec![i, j]);
            for l in (j + 1)..m {
                sets.push(vec![i, j, l]);
            }
        }
    }
    sets.sort_by_key(|s| s.len());

    for set in &sets {
        let k = set.len();
        let u = if k == 0 {
            qp.target
        } else {
            // Equality-constrained projection: u = target + A^T mu,
            // (A A^T) mu = b - A target.
            let mut aat = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (r, &i) in set.iter().enumerate() {
                rhs[r] = cs[i].1 - cs[i].0.dot(&qp.target);
                for (c, &j) in set.iter().enumerate() {
                    aat[(r, c)] = cs[i].0.dot(&cs[j].0);
                }
            }
            let Some(mu) = aat.lu().solve(&rhs) else {
                continue;
            };
            if !mu.iter().all(|v| v.is_finite()) {
                continue;
            }
            // Dual feasibility for the active inequalities.
            if mu.iter().any(|&v| v < -1e-10) {
                continue;
            }
            let mut u = qp.target;
            for (r, &i) in set.iter().enumerate() {
                u += cs[i].0 * mu[r];
            }
            u
        };
        // Primal feasibility over everything.
        if cs.iter().all(|(a, b)| a.dot(&u) >= b - feas_tol) {
            debug_assert!(qp.kkt_residual(&u) <= 1e-8 * (1.0 + qp.target.norm()));
            return Ok(u);
        }
    }
    Err(SapError::QpInfeasible)
}

/// Safe fallback when the QP is infeasible: brake along the composite error,
/// clamped to the force box.
pub fn braking_force(z: &Vector3<f64>, gains: &LowLevelGains, qp: &SafetyQp) -> Vector3<f64> {
    let mut u = switching_term(z, gains);
    for j in 0..3 {
        u[j] = u[j].clamp(qp.lo[j], qp.hi[j]);
    }
    u
}

/// Best-effort force when the box cannot satisfy every row: minimize the
/// summed squared row violations (anchored weakly at the braking force) by
/// projected gradient descent over the box. Rows whose demands exceed the
/// force budget then draw a graded push toward their half-space instead of
/// a discontinuous slam into a box corner.
pub fn least_violation_force(
    z: &Vector3<f64>,
    gains: &LowLevelGains,
    qp: &SafetyQp,
) -> Vector3<f64> {
    let anchor = braking_force(z, gains, qp);
    let eps = 1e-3;
    let mut lip = eps;
    for (a, _) in &qp.rows {
        lip += a.norm_squared();
    }
    let step = 0.5 / lip;
    let mut u = anchor;
    for _ in 0..200 {
        let mut grad = 2.0 * eps * (u - anchor);
        for (a, b) in &qp.rows {
            let viol = b - a.dot(&u);
            if viol > 0.0 {
                grad -= 2.0 * viol * a;
            }
        }
        u -= step * grad;
        for j in 0..3 {
            u[j] = u[j].clamp(qp.lo[j], qp.hi[j]);
        }
    }
    u
}

/// Joint torques realizing a task-space force: tau = J^T u_act.
pub fn to_torques(terms: &DynamicsTerms, u_act: &Vector3<f64>) -> DVector<f64> {
    terms.j.transpose() * u_act
}
