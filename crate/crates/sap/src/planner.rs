//! Receding-horizon joint-velocity planner: unrolled single-integrator
//! dynamics, Cartesian tracking cost with quaternion error, terminal joint
//! equality and per-step clamp constraints on the predicted human distance,
//! solved by the penalty/PANOC stack with analytic gradients.

use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3};

use crate::dynamics::{FkPass, KinematicChain};
use crate::geometry::{capsules_from_origins, min_distance, HumanModel};
use crate::solver::{penalty_solve, Bounds, LiftedProblem, SolverConfig, SolverOutcome};
use crate::{Result, SapError};

/// Weights and discretization of the receding-horizon problem.
#[derive(Debug, Clone)]
pub struct NmpcConfig {
    /// Horizon steps.
    pub horizon: usize,
    /// Planner step, s.
    pub ts: f64,
    /// Terminal error weights: 3 position + 3 orientation components.
    pub qp: [f64; 6],
    /// Terminal input weights, one per joint.
    pub qv: Vec<f64>,
    /// Stage error weights: 3 position + 3 orientation components.
    pub rp: [f64; 6],
    /// Stage input weights, one per joint.
    pub rv: Vec<f64>,
    /// Minimum allowed human distance, m.
    pub d_safe: f64,
    /// Symmetric per-joint velocity bound, rad/s.
    pub u_max: Vec<f64>,
    /// Collision capsule radius per link, m.
    pub link_radii: Vec<f64>,
    pub solver: SolverConfig,
}

impl NmpcConfig {
    /// Reference tuning for the 7-DOF scenario.
    pub fn reference(n: usize) -> Self {
        Self {
            horizon: 20,
            ts: 0.05,
            qp: [5.0, 5.0, 5.0, 1.0, 1.0, 0.0],
            qv: vec![1.0; n],
            rp: [3.0, 3.0, 3.0, 0.0, 0.0, 0.0],
            rv: vec![0.1; n],
            d_safe: 0.10,
            u_max: vec![2.0; n],
            link_radii: vec![0.06; n],
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.horizon == 0 || self.ts <= 0.0 || self.d_safe <= 0.0 {
            return Err(SapError::Argument(
                "horizon, step and safe distance must be positive".into(),
            ));
        }
        if self.qv.len() != n || self.rv.len() != n || self.u_max.len() != n {
            return Err(SapError::Argument(format!(
                "per-joint weight/bound vectors must have length {n}"
            )));
        }
        if self.link_radii.len() != n {
            return Err(SapError::Argument(format!(
                "expected {n} link radii, got {}",
                self.link_radii.len()
            )));
        }
        let weights = self
            .qp
            .iter()
            .chain(self.rp.iter())
            .chain(self.qv.iter())
            .chain(self.rv.iter());
        if weights.clone().any(|&w| w < 0.0) {
            return Err(SapError::Argument("weights must be nonnegative".into()));
        }
        if self.u_max.iter().any(|&b| b <= 0.0) {
            return Err(SapError::Argument("velocity bounds must be positive".into()));
        }
        Ok(())
    }
}

/// Per-tick problem data for one plan.
#[derive(Debug, Clone)]
pub struct PlannerInput {
    pub q0: DVector<f64>,
    /// Terminal joint set-point (inverse kinematics of the predicted goal).
    pub q_f: DVector<f64>,
    /// Desired end-effector orientation, held constant over the horizon.
    pub ori_d: UnitQuaternion<f64>,
    /// Predicted hand positions, one per horizon step.
    pub p_rh_traj: Vec<Vector3<f64>>,
    /// Predicted human capsule models, one per horizon step.
    pub p_o_traj: Vec<HumanModel>,
}

/// Joint and Cartesian states along one rollout; index 0 is the current
/// state, index k the prediction after k steps.
#[derive(Debug, Clone)]
pub struct RolloutStates {
    pub q: Vec<DVector<f64>>,
    pub x: Vec<Vector3<f64>>,
    pub ori: Vec<UnitQuaternion<f64>>,
}

/// Exact Euler recursion `q_{k+1} = q_k + ts * u_k` with forward kinematics
/// at every step. `u_flat` stacks the horizon commands joint-major per step.
pub fn rollout(
    chain: &KinematicChain,
    q0: &DVector<f64>,
    u_flat: &DVector<f64>,
    horizon: usize,
    ts: f64,
) -> Result<RolloutStates> {
    let n = chain.n();
    if q0.len() != n {
        return Err(SapError::Argument(format!(
            "expected {n} joint values, got {}",
            q0.len()
        )));
    }
    if u_flat.len() != n * horizon {
        return Err(SapError::Argument(format!(
            "expected {} command values, got {}",
            n * horizon,
            u_flat.len()
        )));
    }
    let mut q = Vec::with_capacity(horizon + 1);
    let mut x = Vec::with_capacity(horizon + 1);
    let mut ori = Vec::with_capacity(horizon + 1);
    let mut qk = q0.clone();
    for k in 0..=horizon {
        let pass = FkPass::positions(chain, &qk);
        x.push(pass.ee_position());
        ori.push(pass.ee_orientation());
        q.push(qk.clone());
        if k < horizon {
            for i in 0..n {
                qk[i] += ts * u_flat[k * n + i];
            }
        }
    }
    Ok(RolloutStates { q, x, ori })
}

/// Quaternion tracking error `e = vec(d^-1 * a)` with the double-cover sign
/// fix, plus the matrix mapping world angular velocity to `de/dt`:
/// `de/dq_j = E * jw_col_j` with `E = 0.5 (eta I - [eps]x) R_d^T`.
fn orientation_error_and_map(
    desired: &UnitQuaternion<f64>,
    actual: &UnitQuaternion<f64>,
) -> (Vector3<f64>, Matrix3<f64>) {
    let mut delta = desired.inverse() * actual;
    if delta.scalar() < 0.0 {
        delta = UnitQuaternion::from_quaternion(-delta.into_inner());
    }
    let eta = delta.scalar();
    let eps = delta.vector().into_owned();
    let skew = Matrix3::new(
        0.0, -eps[2], eps[1], //
        eps[2], 0.0, -eps[0], //
        -eps[1], eps[0], 0.0,
    );
    let e_map = 0.5 * (Matrix3::identity() * eta - skew) * desired.to_rotation_matrix().matrix().transpose();
    (eps, e_map)
}

/// Assembled optimal-control problem: penalized cost with analytic gradient
/// plus the infeasibility measure used by the penalty loop.
pub struct Ocp<'a> {
    chain: &'a KinematicChain,
    input: &'a PlannerInput,
    cfg: &'a NmpcConfig,
}

pub fn build_ocp<'a>(
    chain: &'a KinematicChain,
    input: &'a PlannerInput,
    cfg: &'a NmpcConfig,
) -> Result<Ocp<'a>> {
    let n = chain.n();
    cfg.validate(n)?;
    if input.q0.len() != n || input.q_f.len() != n {
        return Err(SapError::Argument(format!(
            "q0/q_f must have length {n}"
        )));
    }
    if input.p_rh_traj.len() != cfg.horizon || input.p_o_traj.len() != cfg.horizon {
        return Err(SapError::Argument(format!(
            "predicted trajectories must have {} frames",
            cfg.horizon
        )));
    }
    Ok(Ocp { chain, input, cfg })
}

impl Ocp<'_> {
    pub fn dim(&self) -> usize {
        self.chain.n() * self.cfg.horizon
    }

    pub fn bounds(&self) -> Bounds {
        let n = self.chain.n();
        let mut lo = DVector::zeros(self.dim());
        let mut hi = DVector::zeros(self.dim());
        for k in 0..self.cfg.horizon {
            for i in 0..n {
                lo[k * n + i] = -self.cfg.u_max[i];
                hi[k * n + i] = self.cfg.u_max[i];
            }
        }
        Bounds { lo, hi }
    }

    /// Penalized cost `F0 + c * (||F1||^2 + sum_k [d_safe - lambda_k]+^2)`
    /// with its gradient by reverse accumulation through the rollout.
    pub fn psi(&self, u: &DVector<f64>, c: f64, grad: &mut DVector<f64>) -> f64 {
        let n = self.chain.n();
        let nh = self.cfg.horizon;
        let ts = self.cfg.ts;
        let states = rollout(self.chain, &self.input.q0, u, nh, ts)
            .expect("dimensions validated at build time");

        grad.fill(0.0);
        let mut cost = 0.0;
        // dcost/dq_k for k = 1..=nh, folded into u via the suffix sum.
        let mut gq = vec![DVector::<f64>::zeros(n); nh + 1];

        for k in 1..=nh {
            let pass = FkPass::positions(self.chain, &states.q[k]);
            let x = pass.ee_position();
            let terminal = k == nh;

            // Tracking error against the predicted hand position.
            let target = self.input.p_rh_traj[k - 1];
            let e_pos = target - x;
            let wp = |i: usize| {
                self.cfg.rp[i] + if terminal { self.cfg.qp[i] } else { 0.0 }
            };
            let mut de_pos = Vector3::zeros();
            for i in 0..3 {
                cost += wp(i) * e_pos[i] * e_pos[i];
                de_pos[i] = 2.0 * wp(i) * e_pos[i];
            }
            // de_pos/dq = -Jp.
            let jp = pass.position_jacobian(n, &x);
            let g_pos = -(jp.transpose() * de_pos);
            gq[k] += &g_pos;

            // Orientation rows, only when weighted.
            let w_ori: [f64; 3] = [wp(3), wp(4), wp(5)];
            if w_ori.iter().any(|&w| w > 0.0) {
                let (e_ori, e_map) =
                    orientation_error_and_map(&self.input.ori_d, &pass.ee_orientation());
                let mut de_ori = Vector3::zeros();
                for i in 0..3 {
                    cost += w_ori[i] * e_ori[i] * e_ori[i];
                    de_ori[i] = 2.0 * w_ori[i] * e_ori[i];
                }
                let jw = pass.angular_jacobian(n);
                gq[k] += (e_map * jw).transpose() * de_ori;
            }

            // Clamp constraint on the predicted human distance. A cheap
            // lower bound skips the exact GJK pass when the scene is
            // clearly beyond the safety margin.
            let caps = capsules_from_origins(&pass.origin, &self.cfg.link_radii)
                .expect("link radii validated");
            if crate::geometry::min_distance_lower_bound(&caps, &self.input.p_o_traj[k - 1])
                < self.cfg.d_safe
            {
                let dist = min_distance(&caps, &self.input.p_o_traj[k - 1])
                    .expect("nonempty capsule sets");
                let viol = (self.cfg.d_safe - dist.lambda).max(0.0);
                if viol > 0.0 && dist.lambda.abs() > 1e-12 {
                    cost += c * viol * viol;
                    // Witness gap vector is lambda * n by construction.
                    let normal = (dist.x_witness - dist.p_support) / dist.lambda;
                    let jw_point = pass.position_jacobian(dist.pair.0 + 1, &dist.x_witness);
                    // d lambda / dq = n^T J_point; clamp derivative is -1 inside.
                    gq[k] -= jw_point.transpose() * normal * (2.0 * c * viol);
                } else if viol > 0.0 {
                    cost += c * viol * viol;
                }
            }
        }

        // Joint position limits as per-stage clamp constraints; the plant
        // hard-clamps at the limits, so plans crossing them would wedge the
        // arm against the stops.
        for k in 1..=nh {
            for i in 0..n {
                let qi = states.q[k][i];
                let link = &self.chain.links()[i];
                let over = (qi - link.q_max).max(0.0);
                let under = (link.q_min - qi).max(0.0);
                if over > 0.0 || under > 0.0 {
                    cost += c * (over * over + under * under);
                    gq[k][i] += 2.0 * c * (over - under);
                }
            }
        }

        // Terminal joint equality as a soft constraint.
        let fq = &states.q[nh] - &self.input.q_f;
        cost += c * fq.norm_squared();
        gq[nh] += fq * (2.0 * c);

        // Reverse accumulation: dq_k/du_j = ts * I for j < k.
        let mut suffix = DVector::<f64>::zeros(n);
        for k in (1..=nh).rev() {
            suffix += &gq[k];
            let j = k - 1;
            for i in 0..n {
                grad[j * n + i] += ts * suffix[i];
            }
        }

        // Direct input terms.
        for j in 0..nh {
            for i in 0..n {
                let uji = u[j * n + i];
                let mut w = self.cfg.rv[i];
                if j == nh - 1 {
                    w += self.cfg.qv[i];
                }
                cost += w * uji * uji;
                grad[j * n + i] += 2.0 * w * uji;
            }
        }
        cost
    }

    /// Worst constraint residual: max of the terminal joint mismatch and the
    /// per-step clamp violations (inf-norm over all soft constraints).
    pub fn infeasibility(&self, u: &DVector<f64>) -> f64 {
        let states = rollout(self.chain, &self.input.q0, u, self.cfg.horizon, self.cfg.ts)
            .expect("dimensions validated at build time");
        let mut worst = (&states.q[self.cfg.horizon] - &self.input.q_f).amax();
        for k in 1..=self.cfg.horizon {
            worst = worst.max(self.cfg.d_safe - self.lambda_at(&states.q[k], k - 1));
            for (i, link) in self.chain.links().iter().enumerate() {
                let qi = states.q[k][i];
                worst = worst.max(qi - link.q_max).max(link.q_min - qi);
            }
        }
        worst.max(0.0)
    }

    /// Minimum predicted signed distance along a rollout of `u`.
    pub fn min_lambda(&self, u: &DVector<f64>) -> f64 {
        let states = rollout(self.chain, &self.input.q0, u, self.cfg.horizon, self.cfg.ts)
            .expect("dimensions validated at build time");
        (1..=self.cfg.horizon)
            .map(|k| self.lambda_at(&states.q[k], k - 1))
            .fold(f64::INFINITY, f64::min)
    }

    fn lambda_at(&self, q: &DVector<f64>, frame: usize) -> f64 {
        let pass = FkPass::positions(self.chain, q);
        let caps = capsules_from_origins(&pass.origin, &self.cfg.link_radii)
            .expect("link radii validated");
        min_distance(&caps, &self.input.p_o_traj[frame])
            .expect("nonempty capsule sets")
            .lambda
    }
}

/// Result of one receding-horizon solve.
#[derive(Debug, Clone)]
pub struct PlanResult {
    /// First optimal command, the only one applied.
    pub u0: DVector<f64>,
    pub full_sequence: DVector<f64>,
    pub predicted_states: RolloutStates,
    pub solver: SolverOutcome,
    pub min_pred_lambda: f64,
    /// Set when the solver hit an iteration cap and returned its best
    /// iterate; the downstream safety filter is the guard.
    pub degraded: bool,
}

/// Stateful receding-horizon planner holding the warm start between ticks.
pub struct Planner {
    chain: KinematicChain,
    cfg: NmpcConfig,
    warm: Option<DVector<f64>>,
}

impl Planner {
    pub fn new(chain: KinematicChain, cfg: NmpcConfig) -> Result<Self> {
        cfg.validate(chain.n())?;
        Ok(Self {
            chain,
            cfg,
            warm: None,
        })
    }

    pub fn config(&self) -> &NmpcConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    /// Solves the horizon problem, warm-started with the previous solution
    /// shifted by one step and zero-padded.
    pub fn plan_step(&mut self, input: &PlannerInput) -> Result<PlanResult> {
        let n = self.chain.n();
        let nh = self.cfg.horizon;
        let ocp = build_ocp(&self.chain, input, &self.cfg)?;
        let bounds = ocp.bounds();

        let u0 = match &self.warm {
            Some(prev) => {
                let mut shifted = DVector::zeros(n * nh);
                shifted.rows_mut(0, n * (nh - 1)).copy_from(&prev.rows(n, n * (nh - 1)));
                shifted
            }
            None => DVector::zeros(n * nh),
        };

        let mut problem = LiftedProblem {
            psi: |u: &DVector<f64>, c: f64, g: &mut DVector<f64>| ocp.psi(u, c, g),
            infeasibility: |u: &DVector<f64>| ocp.infeasibility(u),
        };
        let outcome = penalty_solve(&mut problem, &bounds, u0, &self.cfg.solver);
        if !outcome.u.iter().all(|v| v.is_finite()) || !outcome.cost.is_finite() {
            self.warm = None;
            return Err(SapError::Planner("non-finite solver iterate".into()));
        }

        let u = outcome.u.clone();
        let predicted_states = rollout(&self.chain, &input.q0, &u, nh, self.cfg.ts)?;
        let min_pred_lambda = ocp.min_lambda(&u);
        self.warm = Some(u.clone());
        let degraded = outcome.status != crate::solver::SolverStatus::Converged;
        Ok(PlanResult {
            u0: u.rows(0, n).into_owned(),
            full_sequence: u,
            predicted_states,
            solver: outcome,
            min_pred_lambda,
            degraded,
        })
    }
}

/// Desired-state reference advanced by the applied command.
#[derive(Debug, Clone)]
pub struct Reference {
    pub q_d: DVector<f64>,
    pub x_d: Vector3<f64>,
    pub ori_d: UnitQuaternion<f64>,
    pub xd_d: Vector3<f64>,
    pub xdd_d: Vector3<f64>,
}

/// Euler-integrates the reference joint state with the applied command and
/// maps it through the kinematics. `xd_prev` is the previous tick's desired
/// velocity; `xdd_d` is its first difference (zero on the first tick).
pub fn integrate_reference(
    chain: &KinematicChain,
    q_d_prev: &DVector<f64>,
    u0: &DVector<f64>,
    ts: f64,
    xd_prev: Option<&Vector3<f64>>,
) -> Result<Reference> {
    let n = chain.n();
    if q_d_prev.len() != n || u0.len() != n {
        return Err(SapError::Argument(format!(
            "expected joint vectors of length {n}"
        )));
    }
    if ts <= 0.0 {
        return Err(SapError::Argument("step must be positive".into()));
    }
    let q_d = q_d_prev + u0 * ts;
    let pass = FkPass::positions(chain, &q_d);
    let x_d = pass.ee_position();
    let jp = pass.position_jacobian(n, &x_d);
    let xd = jp * u0;
    let xd_d = Vector3::new(xd[0], xd[1], xd[2]);
    let xdd_d = match xd_prev {
        Some(prev) => (xd_d - prev) / ts,
        None => Vector3::zeros(),
    };
    Ok(Reference {
        q_d,
        x_d,
        ori_d: pass.ee_orientation(),
        xd_d,
        xdd_d,
    })
}
