//! Closed-loop trial execution: 1 kHz plant, 200 Hz force controller and
//! safety filter, 20 Hz planner driven by skeleton playback, plus the
//! idle-time turn-taking experiment.

use std::io::Write;

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Controller, ScenarioConfig};
use crate::dynamics::{
    coriolis_vector, crba, dynamics_terms, gravity_vector, inverse_kinematics_best_effort,
    FkPass, JointState, KinematicChain, TaskState,
};
use crate::geometry::{
    capsules_from_origins, min_distance, skeleton_to_capsules, BoneMap, HumanModel,
};
use crate::planner::{integrate_reference, Planner, PlannerInput, Reference};
use crate::safety::{
    barrier_rows, clf_row, composite_error, filter, least_violation_force, nominal_force,
    to_torques,
    SafetyQp, WitnessTracker,
};
use crate::solver::SolverStatus;
use crate::{Result, SapError};

use super::predict::{predict, recognize, Prediction, TAU_P};
use super::trajectory::{Action, SkeletonTrajectory, FRAME_DT, RIGHT_HAND_JOINT};

/// Planner period, s (matches the 20 Hz vision rate).
pub const PLAN_DT: f64 = FRAME_DT;
/// Safety filter period, s.
pub const FILTER_DT: f64 = 0.005;
/// Plant integration period, s.
pub const PLANT_DT: f64 = 0.001;

/// Offset of the joint goal from the predicted hand along the hand-to-base
/// direction: handover standoff keeping the terminal pose outside d_safe.
pub const GOAL_STANDOFF: f64 = 0.35;
/// Null-space posture stiffness, 1/s^2. The torque is
/// (M - J^T Lambda_x J) kp (q_d - q): inertia-scaled (stable at the 1 ms
/// plant step), bounded-energy (the weighting matrix is symmetric PSD),
/// and with exactly zero end-effector effect since
/// J M^-1 (M - J^T Lambda_x J) = 0. It keeps the redundant joints on the
/// planned posture so the arm cannot wedge against its joint limits.
pub const NULLSPACE_STIFFNESS: f64 = 36.0;
/// Joint velocity-servo rate, 1/s: torque -rate * M (qd - qd_ref) models
/// the arm's internal velocity loop around the planned joint rate. Zero
/// at perfect tracking; inertia scaling keeps every mode equally damped.
pub const VELOCITY_SERVO_RATE: f64 = 20.0;
/// Per-joint acceleration cap of the velocity servo, rad/s^2. Keeps the
/// servo's drive torque small enough that the safety filter's bounded
/// task force retains authority over the resulting link motion.
pub const SERVO_ACC_LIMIT: f64 = 8.0;
/// Slew limit on the commanded joint rate between planning ticks, rad/s^2.
/// The planner's velocity decision can step arbitrarily between plans;
/// ramping the applied command keeps the integrated reference within the
/// acceleration the torque-limited tracking layers can actually realize.
pub const PLAN_ACC_LIMIT: f64 = 4.0;
/// End-effector arrival tolerance against the joint-goal pose, m.
pub const ARRIVAL_TOL: f64 = 0.01;
/// End-effector speed below which the arm counts as holding still, m/s.
/// Joint-level dither from the planner/filter clearance standoff can keep
/// the joint-rate norm high while the end effector is visually stationary.
pub const HOLD_EE_SPEED: f64 = 0.05;

/// One 1 kHz log row.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    /// Signed clearance to the interpolated ground-truth human, m.
    pub lambda: f64,
    /// End-effector acceleration magnitude, m/s^2.
    pub acc: f64,
    pub q: DVector<f64>,
    pub violation: bool,
    pub solver_status: &'static str,
}

/// Aggregate metrics of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    pub max_acc: f64,
    pub min_lambda: f64,
    pub h_idl: f64,
    pub r_idl: f64,
    pub total_time: f64,
    pub violation_count: usize,
}

/// Invocation counters for the rate-layering property.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateCounters {
    pub planner_calls: usize,
    pub filter_calls: usize,
    pub plant_steps: usize,
    pub qp_fallbacks: usize,
}

/// Full output of one trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub metrics: TrialMetrics,
    pub ticks: Vec<TickRecord>,
    pub counters: RateCounters,
    /// Set when the plant faulted; the tick log covers the run up to it.
    pub fault: Option<String>,
    /// Hash of the human trajectory driving the trial.
    pub traj_hash: u64,
    pub goal_reached: bool,
}

/// Shared immutable inputs of a batch of trials.
pub struct TrialContext {
    pub chain: KinematicChain,
    pub traj: SkeletonTrajectory,
    pub bone_map: BoneMap,
    pub cfg: ScenarioConfig,
}

impl TrialContext {
    pub fn load(cfg: &ScenarioConfig) -> Result<Self> {
        Ok(Self {
            chain: KinematicChain::from_file(&cfg.robot_file)?,
            traj: SkeletonTrajectory::from_csv(&cfg.trajectory_file)?,
            bone_map: BoneMap::from_file(&cfg.bone_map_file)?,
            cfg: cfg.clone(),
        })
    }

    /// Same scenario with a different trajectory (suite variants).
    pub fn with_trajectory(&self, traj: SkeletonTrajectory) -> Self {
        Self {
            chain: self.chain.clone(),
            traj,
            bone_map: self.bone_map.clone(),
            cfg: self.cfg.clone(),
        }
    }
}

/// FNV-1a over the trajectory's raw numeric content; stable across runs.
pub fn trajectory_hash(traj: &SkeletonTrajectory) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for f in &traj.frames {
        eat(&f.t.to_bits().to_le_bytes());
        eat(f.label.as_str().as_bytes());
        for p in &f.joints {
            for a in 0..3 {
                eat(&p[a].to_bits().to_le_bytes());
            }
        }
    }
    h
}

/// Semi-implicit Euler step of the joint plant M qdd + C qd + g = tau.
/// Joint rates are clamped to the rated speed and joints hitting their
/// position limits are clamped with zeroed velocity. Also returns the
/// realized joint acceleration: the clamped velocity change over the step,
/// which is what the drive actually produces when its speed limiter
/// absorbs part of the commanded torque.
pub fn plant_step(
    chain: &KinematicChain,
    state: &JointState,
    tau: &DVector<f64>,
    dt: f64,
    t: f64,
) -> Result<(JointState, DVector<f64>)> {
    let m = crba(chain, &state.q);
    let rhs = tau - coriolis_vector(chain, &state.q, &state.qd) - gravity_vector(chain, &state.q);
    let qdd = m
        .cholesky()
        .ok_or(SapError::SimFault {
            t,
            msg: "mass matrix lost positive definiteness".into(),
        })?
        .solve(&rhs);
    if qdd.iter().any(|v| !v.is_finite()) {
        return Err(SapError::SimFault {
            t,
            msg: "non-finite joint acceleration".into(),
        });
    }
    let mut qd = &state.qd + &qdd * dt;
    // Drive firmware enforces the rated joint speed regardless of the
    // commanded torque; without this clamp a large task force on a
    // low-inertia wrist joint can spin it up unphysically fast.
    for (i, l) in chain.links().iter().enumerate() {
        qd[i] = qd[i].clamp(-l.v_max, l.v_max);
    }
    // Realized acceleration: the velocity change the clamped drive actually
    // produces, not the torque-implied one the speed limiter absorbs.
    let qdd = (&qd - &state.qd) / dt;
    let mut q = &state.q + &qd * dt;
    for (i, l) in chain.links().iter().enumerate() {
        if q[i] <= l.q_min {
            q[i] = l.q_min;
            qd[i] = qd[i].max(0.0);
        } else if q[i] >= l.q_max {
            q[i] = l.q_max;
            qd[i] = qd[i].min(0.0);
        }
    }
    Ok((JointState::new(q, qd)?, qdd))
}

/// Joint-level feedforward applied alongside J^T u_act, modeling the
/// robot's internal compensation:
///   tau_ff = (g - J^T gx) + (M - J^T Lambda_x J) kp (q_ref - q)
///            - rate * M (qd - qd_ref),
/// with Lambda_x = (J M^-1 J^T)^-1. The first part completes gravity
/// compensation to exactly g once the task controller contributes its gx
/// feedforward (static equilibrium holds at rest); the second is the
/// null-space posture servo toward the planned joint reference; the third
/// is the internal velocity loop around the planned joint rate.
fn feedforward_torque(
    terms: &crate::dynamics::DynamicsTerms,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    q_ref: &DVector<f64>,
    qd_ref: &DVector<f64>,
    force_limit: f64,
    t: f64,
) -> Result<DVector<f64>> {
    let chol = terms.m.clone().cholesky().ok_or(SapError::SimFault {
        t,
        msg: "mass matrix lost positive definiteness".into(),
    })?;
    let minv_jt = chol.solve(&terms.j.transpose());
    let lambda_x = (&terms.j * &minv_jt)
        .try_inverse()
        .ok_or(SapError::SimFault {
            t,
            msg: "task-space inertia not invertible".into(),
        })?;
    let servo = (q_ref - q) * NULLSPACE_STIFFNESS;
    let j_servo = &terms.j * &servo;
    let null_servo = &terms.m * &servo - terms.j.transpose() * (lambda_x * j_servo);
    let acc_cmd =
        ((qd_ref - qd) * VELOCITY_SERVO_RATE).map(|a| a.clamp(-SERVO_ACC_LIMIT, SERVO_ACC_LIMIT));
    let vel_servo = &terms.m * acc_cmd;
    // Credit only the part of gx the box-limited task controller can
    // actually deliver: in stretched postures gx exceeds the force box and
    // crediting all of it would leave a net downward end-effector force no
    // controller output could cancel, making such postures absorbing.
    let gx_credit = terms.gx.map(|v| v.clamp(-force_limit, force_limit));
    Ok(&terms.g - terms.j.transpose() * gx_credit + null_servo + vel_servo)
}

fn status_str(status: SolverStatus, degraded: bool) -> &'static str {
    match (status, degraded) {
        (SolverStatus::Converged, _) => "converged",
        (SolverStatus::MaxIterations, _) => "max_iterations",
        (SolverStatus::Infeasible, _) => "infeasible",
    }
}

/// Internal closed-loop state shared by run_trial and the idle experiment.
struct Sim<'a> {
    ctx: &'a TrialContext,
    controller: Controller,
    rng: ChaCha8Rng,
    state: JointState,
    reference: Reference,
    planner: Planner,
    tracker: WitnessTracker,
    counters: RateCounters,
    ticks: Vec<TickRecord>,
    sub_id: u64,
    last_status: &'static str,
    /// End-effector pose of the current joint goal, once one exists.
    goal_x: Option<Vector3<f64>>,
    q_f: DVector<f64>,
    /// Rest posture the arm returns to when no handover is active.
    q_home: DVector<f64>,
    /// End-effector position of the rest posture.
    x_home: Vector3<f64>,
    /// Planned joint rate the internal velocity loop servos around.
    qd_ref: DVector<f64>,
    fault: Option<String>,
    /// First wall time at which the end effector reached the goal pose.
    arrival_time: Option<f64>,
}

impl<'a> Sim<'a> {
    fn new(ctx: &'a TrialContext, controller: Controller, seed: u64, q0: DVector<f64>) -> Result<Self> {
        let chain = &ctx.chain;
        let n = chain.n();
        if q0.len() != n {
            return Err(SapError::Argument(format!(
                "start configuration must have {n} joints"
            )));
        }
        let pass = FkPass::positions(chain, &q0);
        let reference = Reference {
            q_d: q0.clone(),
            x_d: pass.ee_position(),
            ori_d: pass.ee_orientation(),
            xd_d: Vector3::zeros(),
            xdd_d: Vector3::zeros(),
        };
        let x_home = reference.x_d;
        Ok(Self {
            ctx,
            controller,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: JointState::new(q0.clone(), DVector::zeros(n))?,
            reference,
            planner: Planner::new(chain.clone(), {
                // Plan against the same inflated distance the filter enforces
                // so nominal approaches stay clear of the filter boundary.
                let mut plan_cfg = ctx.cfg.nmpc.clone();
                plan_cfg.d_safe += ctx.cfg.filter_margin;
                plan_cfg
            })?,
            tracker: WitnessTracker::new(n, FILTER_DT),
            counters: RateCounters::default(),
            ticks: Vec::new(),
            sub_id: 0,
            last_status: "idle",
            goal_x: None,
            q_f: q0.clone(),
            q_home: q0,
            x_home,
            qd_ref: DVector::zeros(n),
            fault: None,
            arrival_time: None,
        })
    }

    /// Freeze the reference in place (no active plan).
    fn hold_reference(&mut self) {
        self.reference.xd_d = Vector3::zeros();
        self.reference.xdd_d = Vector3::zeros();
        self.qd_ref.fill(0.0);
    }

    /// One 20 Hz planning tick from a prediction.
    fn plan_tick(&mut self, pred: &Prediction) -> Result<()> {
        let chain = &self.ctx.chain;
        let hand = *pred.p_rh.last().expect("non-empty prediction");
        // Handover standoff: back off from the hand toward the robot base.
        let dir = -hand;
        let target_x = if dir.norm() > 1e-9 {
            hand + dir / dir.norm() * GOAL_STANDOFF
        } else {
            hand
        };
        let target = TaskState {
            x: target_x,
            orientation: self.reference.ori_d,
            xd: Vector3::zeros(),
        };
        // Seed from the previous goal so the redundant arm stays on one
        // inverse-kinematics branch as the target moves.
        if let Ok((qf, _)) = inverse_kinematics_best_effort(chain, &target, &self.q_f) {
            self.q_f = qf;
        }
        let p_o_traj = pred
            .p_o
            .iter()
            .map(|f| skeleton_to_capsules(f, &self.ctx.bone_map))
            .collect::<Result<Vec<HumanModel>>>()?;
        self.plan_core(pred.p_rh.clone(), p_o_traj, true)
    }

    /// One 20 Hz planning tick with no active handover: plan back toward the
    /// rest posture with the current skeleton as a (static) obstacle. Keeping
    /// the planner in the loop makes evasion coherent — the arm yields to an
    /// approaching human along limit-aware joint paths instead of being
    /// shoved by the safety filter against a frozen reference.
    fn plan_home(&mut self, joints: &[Vector3<f64>]) -> Result<()> {
        self.q_f = self.q_home.clone();
        self.goal_x = None;
        let caps = skeleton_to_capsules(joints, &self.ctx.bone_map)?;
        let p_o_traj = vec![caps; TAU_P];
        let p_rh_traj = vec![self.x_home; TAU_P];
        self.plan_core(p_rh_traj, p_o_traj, false)
    }

    /// Shared planning core: solve from the measured state toward `self.q_f`
    /// tracking `p_rh_traj`, then advance the reference one frame.
    fn plan_core(
        &mut self,
        p_rh_traj: Vec<Vector3<f64>>,
        p_o_traj: Vec<HumanModel>,
        record_goal: bool,
    ) -> Result<()> {
        let chain = &self.ctx.chain;
        let cfg = &self.ctx.cfg;
        // Per-tick reachable terminal goal: the horizon covers at most
        // u_max * N_h * ts radians per joint.
        let nh = cfg.nmpc.horizon as f64;
        let mut q_goal = self.q_f.clone();
        for i in 0..q_goal.len() {
            let span = 0.9 * cfg.nmpc.u_max[i] * nh * cfg.nmpc.ts;
            let d = (q_goal[i] - self.state.q[i]).clamp(-span, span);
            q_goal[i] = self.state.q[i] + d;
        }
        let tracked = *p_rh_traj.last().expect("non-empty tracking trajectory");
        let input = PlannerInput {
            // Receding horizon from the measured joint state.
            q0: self.state.q.clone(),
            q_f: q_goal,
            ori_d: self.reference.ori_d,
            p_rh_traj,
            p_o_traj,
        };
        match self.planner.plan_step(&input) {
            Ok(plan) => {
                self.counters.planner_calls += 1;
                self.last_status = status_str(plan.solver.status, plan.degraded);
                let xd_prev = self.reference.xd_d;
                let dv = PLAN_ACC_LIMIT * PLAN_DT;
                let u_cmd = DVector::from_iterator(
                    plan.u0.len(),
                    plan.u0
                        .iter()
                        .zip(self.qd_ref.iter())
                        .map(|(&u, &prev)| prev + (u - prev).clamp(-dv, dv)),
                );
                self.reference = integrate_reference(
                    chain,
                    &self.state.q,
                    &u_cmd,
                    PLAN_DT,
                    Some(&xd_prev),
                )?;
                self.qd_ref = u_cmd;
                let goal_pass = FkPass::positions(chain, &self.q_f);
                if record_goal {
                    self.goal_x = Some(goal_pass.ee_position());
                }
                let at_limits: Vec<usize> = chain
                    .links()
                    .iter()
                    .enumerate()
                    .filter(|(i, l)| {
                        self.state.q[*i] <= l.q_min + 1e-6 || self.state.q[*i] >= l.q_max - 1e-6
                    })
                    .map(|(i, _)| i)
                    .collect();
                log::debug!(
                    "plan: status={} infeas={:.2e} minlam={:.3} iters={}/{} |u0|={:.3} |q_d-q_f|={:.4} |x_d-goal|={:.4} |ee-goal|={:.4} |qd|={:.3} limits={:?}",
                    self.last_status,
                    plan.solver.infeasibility,
                    plan.min_pred_lambda,
                    plan.solver.inner_iters,
                    plan.solver.outer_iters,
                    plan.u0.norm(),
                    (&self.reference.q_d - &self.q_f).norm(),
                    (self.reference.x_d - goal_pass.ee_position()).norm(),
                    (FkPass::positions(chain, &self.state.q).ee_position()
                        - goal_pass.ee_position())
                    .norm(),
                    self.state.qd.norm(),
                    at_limits
                );
                if log::log_enabled!(log::Level::Trace) {
                    let pass = FkPass::positions(chain, &self.state.q);
                    let ee = pass.ee_position();
                    let wrist = pass.origin[chain.n() - 1];
                    log::trace!(
                        "geom: ee=({:.3},{:.3},{:.3}) wrist=({:.3},{:.3},{:.3}) goal=({:.3},{:.3},{:.3}) hand=({:.3},{:.3},{:.3})",
                        ee.x, ee.y, ee.z, wrist.x, wrist.y, wrist.z,
                        goal_pass.ee_position().x, goal_pass.ee_position().y, goal_pass.ee_position().z,
                        tracked.x, tracked.y, tracked.z
                    );
                }
            }
            Err(SapError::Planner(msg)) => {
                log::warn!("planner failed, holding reference: {msg}");
                self.last_status = "plan_error";
                self.hold_reference();
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// Runs the 10 filter sub-ticks (each 5 plant steps) of one frame.
    /// `human_at` maps wall time to the ground-truth skeleton. Returns
    /// false when the plant faulted.
    fn run_subticks(
        &mut self,
        t_frame: f64,
        human_at: &dyn Fn(f64) -> Vec<Vector3<f64>>,
    ) -> Result<bool> {
        let chain = &self.ctx.chain;
        let cfg = &self.ctx.cfg;
        for sub in 0..(PLAN_DT / FILTER_DT).round() as usize {
            let t_sub = t_frame + sub as f64 * FILTER_DT;
            let terms = dynamics_terms(chain, &self.state)?;
            let tau_perp = feedforward_torque(
                &terms,
                &self.state.q,
                &self.state.qd,
                &self.reference.q_d,
                &self.qd_ref,
                cfg.force_limit,
                t_sub,
            )?;
            let pass = FkPass::positions(chain, &self.state.q)
                .with_velocities(&self.state.qd)
                .with_accelerations(&self.state.qd, &DVector::zeros(chain.n()), Vector3::zeros());
            let x = pass.ee_position();
            let xd = pass.ee_velocity();
            let f_h = nominal_force(
                &terms,
                &x,
                &xd,
                &self.reference.x_d,
                &self.reference.xd_d,
                &self.reference.xdd_d,
                &cfg.gains,
            );
            let u_act = match self.controller {
                Controller::NmpcOnly => {
                    let mut u = f_h;
                    for i in 0..3 {
                        u[i] = u[i].clamp(-cfg.force_limit, cfg.force_limit);
                    }
                    u
                }
                Controller::NmpcEcbf => {
                    let joints = human_at(t_sub);
                    let human = skeleton_to_capsules(&joints, &self.ctx.bone_map)?;
                    let rows = barrier_rows(
                        chain,
                        &self.state.q,
                        &self.state.qd,
                        &human,
                        &cfg.nmpc.link_radii,
                        cfg.nmpc.d_safe + cfg.filter_margin,
                        cfg.k_b,
                        &mut self.tracker,
                        self.sub_id,
                        Some(&tau_perp),
                    )?;
                    let mut qp = SafetyQp::new(f_h, cfg.force_limit);
                    // Escape rows from contact/penetration participate too;
                    // only direction-free (vacuous) rows are dropped.
                    for r in rows.iter().filter(|r| r.lg_lf_h.norm() > 1e-12) {
                        qp.rows.push(r.halfspace());
                    }
                    let z = composite_error(
                        &x,
                        &xd,
                        &self.reference.x_d,
                        &self.reference.xd_d,
                        &cfg.gains,
                    );
                    if let Some(gx) = self.goal_x {
                        if (x - gx).norm() < cfg.clf_radius {
                            if let Some(row) = clf_row(&z, &cfg.gains) {
                                qp.rows.push(row);
                            }
                        }
                    }
                    match filter(&qp) {
                        Ok(u) => u,
                        Err(SapError::QpInfeasible) => {
                            self.counters.qp_fallbacks += 1;
                            if log::log_enabled!(log::Level::Trace) {
                                for (a, b) in &qp.rows {
                                    log::trace!(
                                        "qp infeasible t={t_sub:.3}: row a=({:.3},{:.3},{:.3}) b={:.3}",
                                        a.x, a.y, a.z, b
                                    );
                                }
                            }
                            // The box cannot satisfy every row at once:
                            // fall back to the least-violation compromise.
                            least_violation_force(&z, &cfg.gains, &qp)
                        }
                        Err(e) => return Err(e),
                    }
                }
            };
            self.counters.filter_calls += 1;
            self.sub_id += 1;
            if log::log_enabled!(log::Level::Trace) {
                let z = composite_error(
                    &x,
                    &xd,
                    &self.reference.x_d,
                    &self.reference.xd_d,
                    &cfg.gains,
                );
                let caps = capsules_from_origins(&pass.origin, &cfg.nmpc.link_radii)?;
                let dres = min_distance(&caps, &skeleton_to_capsules(&human_at(t_sub), &self.ctx.bone_map)?)?;
                log::trace!(
                    "sub t={:.3} |z|={:.3} f_h=({:.1},{:.1},{:.1}) u=({:.1},{:.1},{:.1}) gx=({:.1},{:.1},{:.1}) |qd|={:.2} xdd_d=({:.1},{:.1},{:.1}) lam={:.3} pair={:?}",
                    t_sub, z.norm(), f_h.x, f_h.y, f_h.z, u_act.x, u_act.y, u_act.z,
                    terms.gx.x, terms.gx.y, terms.gx.z,
                    self.state.qd.norm(),
                    self.reference.xdd_d.x, self.reference.xdd_d.y, self.reference.xdd_d.z,
                    dres.lambda, dres.pair
                );
            }
            let tau = to_torques(&terms, &u_act) + &tau_perp;

            let mut pass_cur = pass;
            for k in 0..(FILTER_DT / PLANT_DT).round() as usize {
                let tp = t_sub + k as f64 * PLANT_DT;
                let qdd = match plant_step(chain, &self.state, &tau, PLANT_DT, tp) {
                    Ok((s, qdd)) => {
                        self.state = s;
                        qdd
                    }
                    Err(SapError::SimFault { t, msg }) => {
                        self.fault = Some(format!("t={t:.3}: {msg}"));
                        return Ok(false);
                    }
                    Err(e) => return Err(e),
                };
                // Analytic end-effector acceleration J qdd + Jdot qd at the
                // pre-step state; a velocity difference would alias the
                // impulsive joint-stop clamps into the metric.
                let n = chain.n();
                let ee_cur = pass_cur.ee_position();
                let acc_vec = pass_cur.position_jacobian(n, &ee_cur) * &qdd
                    + pass_cur.point_bias_acceleration(n, &ee_cur);
                let acc = acc_vec.norm();
                self.counters.plant_steps += 1;
                let t_next = tp + PLANT_DT;
                let pass2 = FkPass::positions(chain, &self.state.q)
                    .with_velocities(&self.state.qd)
                    .with_accelerations(
                        &self.state.qd,
                        &DVector::zeros(chain.n()),
                        Vector3::zeros(),
                    );
                let caps = capsules_from_origins(&pass2.origin, &cfg.nmpc.link_radii)?;
                let joints_gt = human_at(t_next);
                let human_gt = skeleton_to_capsules(&joints_gt, &self.ctx.bone_map)?;
                let dres = min_distance(&caps, &human_gt)?;
                self.ticks.push(TickRecord {
                    t: t_next,
                    lambda: dres.lambda,
                    acc,
                    q: self.state.q.clone(),
                    violation: dres.lambda < cfg.nmpc.d_safe,
                    solver_status: self.last_status,
                });
                if self.arrival_time.is_none() {
                    if let Some(gx) = self.goal_x {
                        let ee = pass2.ee_position();
                        // Exact goal reach, or the handover hold: the clearance
                        // constraint stops the approach before the standoff
                        // point whenever the hand faces the arm, so holding
                        // still anywhere inside the standoff radius counts.
                        let at_goal = (ee - gx).norm() < ARRIVAL_TOL;
                        let holding = (ee - joints_gt[RIGHT_HAND_JOINT]).norm()
                            < GOAL_STANDOFF + ARRIVAL_TOL
                            && pass2.ee_velocity().norm() < HOLD_EE_SPEED;
                        if at_goal || holding {
                            self.arrival_time = Some(t_next);
                        }
                    }
                }
                pass_cur = pass2;
            }
        }
        Ok(true)
    }

    fn finish(self, h_idl: f64, r_idl: f64, total_time: f64, traj_hash: u64) -> TrialOutcome {
        let max_acc = self.ticks.iter().map(|r| r.acc).fold(0.0, f64::max);
        let min_lambda = self
            .ticks
            .iter()
            .map(|r| r.lambda)
            .fold(f64::INFINITY, f64::min);
        let violation_count = self.ticks.iter().filter(|r| r.violation).count();
        TrialOutcome {
            metrics: TrialMetrics {
                max_acc,
                min_lambda,
                h_idl,
                r_idl,
                total_time,
                violation_count,
            },
            goal_reached: self.arrival_time.is_some(),
            ticks: self.ticks,
            counters: self.counters,
            fault: self.fault,
            traj_hash,
        }
    }
}

/// Runs one closed-loop trial against the context's trajectory.
pub fn run_trial(
    ctx: &TrialContext,
    controller: Controller,
    seed: u64,
    q0: &DVector<f64>,
) -> Result<TrialOutcome> {
    let cfg = &ctx.cfg;
    let traj = &ctx.traj;
    let t0 = traj.frames[0].t;
    let hash = trajectory_hash(traj);
    let mut sim = Sim::new(ctx, controller, seed, q0.clone())?;
    let mut end_time = 0.0;

    for fi in 0..traj.len() {
        let t_frame = fi as f64 * PLAN_DT;
        end_time = t_frame;
        let label = recognize(traj.frames[fi].label, cfg.p_err, &mut sim.rng);
        if label == Action::TakeTheScrew {
            break; // Stop the robot: handover reached.
        }
        if label.is_interactive() {
            match predict(cfg.predictor, traj, fi, cfg.noise_bound, &mut sim.rng) {
                Some(pred) => sim.plan_tick(&pred)?,
                None => {
                    if fi + TAU_P >= traj.len() {
                        break; // End of trajectory: stop the robot.
                    }
                    // Not enough history yet: stay near home, keep evading.
                    sim.plan_home(&traj.frames[fi].joints)?;
                }
            }
        } else {
            sim.plan_home(&traj.frames[fi].joints)?;
        }
        if !sim.run_subticks(t_frame, &|t| traj.interpolate(t0 + t))? {
            break; // Plant fault; log retained for post-mortem.
        }
    }

    Ok(sim.finish(0.0, 0.0, end_time, hash))
}

/// Turn-taking idle-time experiment.
///
/// The human hands over at the first `take the screw` block; playback
/// pauses there (human waits, accruing `h_idl`) until the robot reaches the
/// handover pose. `with_prediction` triggers planning at the first
/// `pick up` frame; otherwise planning starts only once the hand has
/// arrived (end of the first `move forward` block). `r_idl` is the time
/// the robot spends waiting at the goal for the human.
pub fn idle_time_experiment(
    ctx: &TrialContext,
    with_prediction: bool,
    seed: u64,
    q0: &DVector<f64>,
) -> Result<TrialOutcome> {
    let cfg = &ctx.cfg;
    let traj = &ctx.traj;
    let t0 = traj.frames[0].t;
    let hash = trajectory_hash(traj);

    let pick = traj
        .first_frame_with(Action::PickUp)
        .ok_or_else(|| missing_label("pick up"))?;
    let fwd_end = traj
        .end_of_first_block(Action::MoveForward)
        .ok_or_else(|| missing_label("move forward"))?;
    let take = traj
        .first_frame_with(Action::TakeTheScrew)
        .ok_or_else(|| missing_label("take the screw"))?;
    for needed in [
        Action::OperateScrewDriver,
        Action::MoveBackward,
        Action::PutDown,
    ] {
        if traj.first_frame_with(needed).is_none() {
            return Err(missing_label(needed.as_str()));
        }
    }
    let trigger_frame = if with_prediction { pick } else { fwd_end };

    let mut sim = Sim::new(ctx, Controller::NmpcEcbf, seed, q0.clone())?;
    let mut wall = 0.0;
    let mut frame = 0usize;
    let mut h_idl = 0.0;
    // Frozen skeleton during the handover pause.
    let frozen = traj.frames[take.saturating_sub(1)].joints.clone();

    while frame < traj.len() {
        let paused = frame >= take && sim.arrival_time.is_none();
        if !paused {
            let label = traj.frames[frame].label;
            if frame >= trigger_frame && label.is_interactive() {
                match predict(cfg.predictor, traj, frame, cfg.noise_bound, &mut sim.rng) {
                    Some(pred) => sim.plan_tick(&pred)?,
                    None => sim.plan_home(&traj.frames[frame].joints)?,
                }
            } else if frame >= trigger_frame && frame < take {
                // Hand already at the interactive position; keep planning
                // toward the frozen handover pose.
                let pred = frozen_prediction(&frozen);
                sim.plan_tick(&pred)?;
            } else {
                sim.plan_home(&traj.frames[frame].joints)?;
            }
        } else {
            // Human waits at the handover; robot keeps tracking its plan.
            let pred = frozen_prediction(&frozen);
            sim.plan_tick(&pred)?;
            h_idl += PLAN_DT;
        }

        let human: Box<dyn Fn(f64) -> Vec<Vector3<f64>>> = if paused {
            let f = frozen.clone();
            Box::new(move |_| f.clone())
        } else {
            let shift = wall - (frame as f64 * PLAN_DT);
            Box::new(move |t| traj.interpolate(t0 + t - shift))
        };
        if !sim.run_subticks(wall, human.as_ref())? {
            break;
        }
        wall += PLAN_DT;
        if !paused {
            frame += 1;
        }
        // Safety valve: a robot that can never arrive must not hang.
        if wall > traj.duration() + 120.0 {
            break;
        }
    }

    let total_time = wall;
    // Robot waits at the goal from arrival until the handover frame plays.
    let hand_ready_wall = take as f64 * PLAN_DT;
    let r_idl = match sim.arrival_time {
        Some(arr) => (hand_ready_wall - arr).max(0.0),
        None => 0.0,
    };
    Ok(sim.finish(h_idl, r_idl, total_time, hash))
}

fn missing_label(label: &str) -> SapError {
    SapError::Config {
        key: "files.trajectory".into(),
        msg: format!("idle-time experiment needs a '{label}' phase"),
    }
}

/// A prediction that repeats one frozen skeleton frame.
fn frozen_prediction(joints: &[Vector3<f64>]) -> Prediction {
    let p_o: Vec<Vec<Vector3<f64>>> = (0..TAU_P).map(|_| joints.to_vec()).collect();
    let p_rh = p_o.iter().map(|f| f[RIGHT_HAND_JOINT]).collect();
    Prediction { p_rh, p_o }
}

/// Writes the tick log in the documented CSV layout.
pub fn write_tick_log(ticks: &[TickRecord], w: &mut impl Write) -> std::io::Result<()> {
    let n = ticks.first().map_or(0, |r| r.q.len());
    write!(w, "t,lambda,acc")?;
    for i in 0..n {
        write!(w, ",q{i}")?;
    }
    writeln!(w, ",violation_flag,solver_status")?;
    for r in ticks {
        write!(w, "{},{},{}", r.t, r.lambda, r.acc)?;
        for v in r.q.iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{},{}", r.violation as u8, r.solver_status)?;
    }
    Ok(())
}

/// Reads a tick log written by [`write_tick_log`] (round-trip check).
pub fn read_tick_log(text: &str) -> Result<Vec<TickRecord>> {
    let mut out = Vec::new();
    let mut n = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            n = line.split(',').count().saturating_sub(5);
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| SapError::Parse {
            path: "<tick log>".into(),
            line: lineno + 1,
            msg,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != n + 5 {
            return Err(err(format!("expected {} fields, got {}", n + 5, f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| err(format!("bad number '{s}'")))
        };
        let q = DVector::from_iterator(
            n,
            f[3..3 + n]
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| err("bad joint value".into()))?,
        );
        out.push(TickRecord {
            t: num(f[0])?,
            lambda: num(f[1])?,
            acc: num(f[2])?,
            q,
            violation: f[3 + n] == "1",
            solver_status: match f[4 + n] {
                "converged" => "converged",
                "max_iterations" => "max_iterations",
                "infeasible" => "infeasible",
                "plan_error" => "plan_error",
                _ => "idle",
            },
        });
    }
    Ok(out)
}
