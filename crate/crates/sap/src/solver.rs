//! Box-constrained nonconvex solver: PANOC (proximal averaged Newton-type
//! method) with L-BFGS acceleration, wrapped in a quadratic-penalty outer
//! loop for the lifted equality/inequality constraints.

use nalgebra::DVector;

use crate::{Result, SapError};

/// Box constraint set with componentwise projection.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl Bounds {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(SapError::Argument("bound length mismatch".into()));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Err(SapError::Argument("lower bound exceeds upper bound".into()));
        }
        Ok(Self { lo, hi })
    }

    /// Symmetric box `[-b, b]^n`.
    pub fn symmetric(n: usize, b: f64) -> Self {
        Self {
            lo: DVector::from_element(n, -b),
            hi: DVector::from_element(n, b),
        }
    }

    pub fn project(&self, u: &mut DVector<f64>) {
        for i in 0..u.len() {
            u[i] = u[i].clamp(self.lo[i], self.hi[i]);
        }
    }
}

/// Tuning knobs for the inner PANOC iteration and penalty outer loop.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Fixed-point residual tolerance (inf-norm of `(u - T(u)) / gamma`).
    pub eps_a: f64,
    /// Constraint infeasibility tolerance for the penalty loop.
    pub eps_b: f64,
    pub max_inner: usize,
    pub lbfgs_mem: usize,
    /// Initial penalty weight.
    pub c0: f64,
    /// Multiplicative penalty growth per outer iteration.
    pub growth: f64,
    pub max_outer: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_a: 1e-2,
            eps_b: 1e-4,
            max_inner: 500,
            lbfgs_mem: 10,
            c0: 10.0,
            growth: 10.0,
            max_outer: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SolverOutcome {
    pub u: DVector<f64>,
    pub cost: f64,
    pub fpr_norm: f64,
    pub infeasibility: f64,
    pub inner_iters: usize,
    pub outer_iters: usize,
    pub penalty: f64,
    pub status: SolverStatus,
}

// ---------------------------------------------------------------------------
// L-BFGS two-loop recursion on the fixed-point residual.

struct Lbfgs {
    mem: usize,
    s: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    rho: Vec<f64>,
}

impl Lbfgs {
    fn new(mem: usize) -> Self {
        Self {
            mem,
            s: Vec::new(),
            y: Vec::new(),
            rho: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    fn push(&mut self, s: DVector<f64>, y: DVector<f64>) {
        let sy = s.dot(&y);
        // Curvature guard keeps the inverse Hessian estimate positive.
        if sy <= 1e-12 * s.norm() * y.norm() {
            return;
        }
        if self.s.len() == self.mem {
            self.s.remove(0);
            self.y.remove(0);
            self.rho.remove(0);
        }
        self.rho.push(1.0 / sy);
        self.s.push(s);
        self.y.push(y);
    }

    /// Two-loop recursion: returns `-H r`.
    fn direction(&self, r: &DVector<f64>) -> DVector<f64> {
        let k = self.s.len();
        let mut q = r.clone();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * self.s[i].dot(&q);
            q -= &self.y[i] * alpha[i];
        }
        if k > 0 {
            let i = k - 1;
            let scale = self.s[i].dot(&self.y[i]) / self.y[i].norm_squared();
            q *= scale;
        }
        for i in 0..k {
            let beta = self.rho[i] * self.y[i].dot(&q);
            q += &self.s[i] * (alpha[i] - beta);
        }
        -q
    }
}

// ---------------------------------------------------------------------------
// PANOC.

#[derive(Debug, Clone)]
pub struct PanocResult {
    pub u: DVector<f64>,
    pub cost: f64,
    pub fpr_norm: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Minimizes a smooth cost over a box. `f` fills the gradient and returns
/// the cost value.
pub fn panoc<F>(
    f: &mut F,
    bounds: &Bounds,
    u0: DVector<f64>,
    eps: f64,
    max_iters: usize,
    lbfgs_mem: usize,
) -> PanocResult
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    let n = u0.len();
    let mut u = u0;
    bounds.project(&mut u);
    let mut grad = DVector::zeros(n);
    let mut fu = f(&u, &mut grad);

    // Local Lipschitz estimate from a small finite increment.
    let delta = 1e-6_f64.max(1e-6 * u.norm());
    let mut gp = DVector::zeros(n);
    let up = u.add_scalar(delta);
    f(&up, &mut gp);
    let mut lip = ((&gp - &grad).norm() / (delta * (n as f64).sqrt())).clamp(1e-6, 1e12);
    let mut gamma = 0.95 / lip;

    let mut lbfgs = Lbfgs::new(lbfgs_mem);
    let mut iters = 0;
    let mut fpr_norm = f64::INFINITY;

    let mut grad_tu = DVector::zeros(n);
    while iters < max_iters {
        iters += 1;
        // Forward-backward step and residual, with local Lipschitz backtracking.
        let (tu, r, ftu);
        loop {
            let mut cand = &u - &grad * gamma;
            bounds.project(&mut cand);
            let res = &u - &cand;
            let fcand = f(&cand, &mut grad_tu);
            let upper = fu - grad.dot(&res) + (lip / 2.0) * res.norm_squared();
            if fcand <= upper + 1e-10 * fu.abs().max(1.0) || gamma < 1e-12 {
                tu = cand;
                r = res;
                ftu = fcand;
                break;
            }
            lip *= 2.0;
            gamma = 0.95 / lip;
            lbfgs.clear();
        }

        fpr_norm = r.amax() / gamma;
        if fpr_norm <= eps {
            u = tu;
            fu = ftu;
            grad.copy_from(&grad_tu);
            break;
        }

        // Forward-backward envelope at u.
        let fbe = |fv: f64, g: &DVector<f64>, res: &DVector<f64>| {
            fv - g.dot(res) + res.norm_squared() / (2.0 * gamma)
        };
        let phi = fbe(fu, &grad, &r);
        let sigma = 0.5 * (1.0 - 0.95) / (2.0 * gamma);
        let target = phi - sigma * r.norm_squared();

        let d = lbfgs.direction(&r);
        let mut tau = 1.0;
        let mut accepted = false;
        let mut u_next = tu.clone();
        let mut f_next = ftu;
        let mut g_next = grad_tu.clone();
        for _ in 0..10 {
            let mut cand = &u - &r * (1.0 - tau) + &d * tau;
            bounds.project(&mut cand);
            let mut gc = DVector::zeros(n);
            let fc = f(&cand, &mut gc);
            // FBE of the candidate needs its own forward-backward step.
            let mut c_tu = &cand - &gc * gamma;
            bounds.project(&mut c_tu);
            let c_r = &cand - &c_tu;
            if fbe(fc, &gc, &c_r) <= target {
                u_next = cand;
                f_next = fc;
                g_next = gc;
                accepted = true;
                break;
            }
            tau *= 0.5;
        }
        if !accepted {
            // Safe fallback: plain forward-backward step.
            u_next = tu;
            f_next = ftu;
            g_next = grad_tu.clone();
        }

        // Residual change feeds the quasi-Newton model.
        let mut tu_next = &u_next - &g_next * gamma;
        bounds.project(&mut tu_next);
        let r_next = &u_next - &tu_next;
        lbfgs.push(&u_next - &u, &r_next - &r);

        u = u_next;
        fu = f_next;
        grad.copy_from(&g_next);
    }

    PanocResult {
        converged: fpr_norm <= eps,
        u,
        cost: fu,
        fpr_norm,
        iters,
    }
}

// ---------------------------------------------------------------------------
// Penalty outer loop.

/// Penalized problem: `psi(u, c) = f0(u) + c * sum ||F_i(u)||^2`, evaluated
/// with its gradient, plus a separate infeasibility measure `max_i ||F_i||`.
pub struct LiftedProblem<P, I>
where
    P: FnMut(&DVector<f64>, f64, &mut DVector<f64>) -> f64,
    I: FnMut(&DVector<f64>) -> f64,
{
    pub psi: P,
    pub infeasibility: I,
}

/// Penalty method: solve the penalized subproblem with PANOC, grow the
/// weight until the constraints are met, warm-starting each round.
pub fn penalty_solve<P, I>(
    problem: &mut LiftedProblem<P, I>,
    bounds: &Bounds,
    u0: DVector<f64>,
    cfg: &SolverConfig,
) -> SolverOutcome
where
    P: FnMut(&DVector<f64>, f64, &mut DVector<f64>) -> f64,
    I: FnMut(&DVector<f64>) -> f64,
{
    let mut u = u0;
    let mut c = cfg.c0;
    let mut inner_total = 0;
    let mut last = PanocResult {
        u: u.clone(),
        cost: f64::INFINITY,
        fpr_norm: f64::INFINITY,
        iters: 0,
        converged: false,
    };
    let mut infeas = f64::INFINITY;
    let mut prev_infeas = f64::INFINITY;

    for outer in 1..=cfg.max_outer {
        let psi = &mut problem.psi;
        let mut eval = |x: &DVector<f64>, g: &mut DVector<f64>| psi(x, c, g);
        last = panoc(&mut eval, bounds, u, cfg.eps_a, cfg.max_inner, cfg.lbfgs_mem);
        inner_total += last.iters;
        u = last.u.clone();
        infeas = (problem.infeasibility)(&u);
        if infeas <= cfg.eps_b {
            return SolverOutcome {
                status: if last.converged {
                    SolverStatus::Converged
                } else {
                    SolverStatus::MaxIterations
                },
                u,
                cost: last.cost,
                fpr_norm: last.fpr_norm,
                infeasibility: infeas,
                inner_iters: inner_total,
                outer_iters: outer,
                penalty: c,
            };
        }
        // Stagnation exit: if a full penalty escalation round barely moved
        // the infeasibility, the constraints are in conflict and further
        // rounds only stiffen the inner problem without progress.
        if outer >= 2 && infeas > 0.75 * prev_infeas {
            return SolverOutcome {
                status: SolverStatus::Infeasible,
                u,
                cost: last.cost,
                fpr_norm: last.fpr_norm,
                infeasibility: infeas,
                inner_iters: inner_total,
                outer_iters: outer,
                penalty: c,
            };
        }
        prev_infeas = infeas;
        c *= cfg.growth;
    }

    SolverOutcome {
        status: SolverStatus::Infeasible,
        u,
        cost: last.cost,
        fpr_norm: last.fpr_norm,
        infeasibility: infeas,
        inner_iters: inner_total,
        outer_iters: cfg.max_outer,
        penalty: c / cfg.growth,
    }
}
