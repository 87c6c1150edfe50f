use nalgebra::{DMatrix, DVector, Vector3};

use super::chain::KinematicChain;
use super::kinematics::FkPass;

/// Inverse dynamics: joint torques for the given motion, gravity included.
pub fn rnea(
    chain: &KinematicChain,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
) -> DVector<f64> {
    let n = chain.n();
    let pass = FkPass::positions(chain, q)
        .with_velocities(qd)
        .with_accelerations(qd, qdd, -chain.gravity());

    // Per-link net force/moment about the link center of mass.
    let mut net_force = vec![Vector3::zeros(); n + 1];
    let mut net_moment = vec![Vector3::zeros(); n + 1];
    let mut com_world = vec![Vector3::zeros(); n + 1];
    for (i, link) in chain.links().iter().enumerate() {
        let idx = i + 1;
        let rc = pass.rot[idx] * link.com;
        let c = pass.origin[idx] + rc;
        com_world[idx] = c;
        let a_c = pass.a[idx]
            + pass.alpha[idx].cross(&rc)
            + pass.omega[idx].cross(&pass.omega[idx].cross(&rc));
        let inertia_w = pass.rot[idx] * link.inertia * pass.rot[idx].transpose();
        net_force[idx] = link.mass * a_c;
        net_moment[idx] =
            inertia_w * pass.alpha[idx] + pass.omega[idx].cross(&(inertia_w * pass.omega[idx]));
    }

    // Backward pass: accumulate joint forces and project on the joint axes.
    let mut tau = DVector::zeros(n);
    let mut f_child = Vector3::zeros();
    let mut n_child = Vector3::zeros(); // moment about origin[i] of child forces
    for i in (1..=n).rev() {
        let f = net_force[i] + f_child;
        // Moment about origin[i-1].
        let moment = net_moment[i]
            + (com_world[i] - pass.origin[i - 1]).cross(&net_force[i])
            + n_child
            + (pass.origin[i] - pass.origin[i - 1]).cross(&f_child);
        tau[i - 1] = pass.z[i - 1].dot(&moment);
        f_child = f;
        // `moment` is about origin[i-1], which is the parent's distal frame
        // origin; the next iteration shifts it again as needed.
        n_child = moment;
    }
    tau
}

/// Gravity torque vector g(q).
pub fn gravity_vector(chain: &KinematicChain, q: &DVector<f64>) -> DVector<f64> {
    let n = chain.n();
    rnea(chain, q, &DVector::zeros(n), &DVector::zeros(n))
}

/// Coriolis/centrifugal torque vector C(q, qd) * qd.
pub fn coriolis_vector(
    chain: &KinematicChain,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> DVector<f64> {
    let n = chain.n();
    rnea(chain, q, qd, &DVector::zeros(n)) - gravity_vector(chain, q)
}

/// Joint-space inertia matrix via the composite-rigid-body algorithm.
pub fn crba(chain: &KinematicChain, q: &DVector<f64>) -> DMatrix<f64> {
    let n = chain.n();
    let pass = FkPass::positions(chain, q);

    // Composite mass, com and inertia (about the composite com, world axes)
    // of the subtree rooted at each link.
    let mut cm = vec![0.0_f64; n + 2];
    let mut cc = vec![Vector3::zeros(); n + 2];
    let mut ci = vec![nalgebra::Matrix3::zeros(); n + 2];
    for i in (1..=n).rev() {
        let link = &chain.links()[i - 1];
        let c_link = pass.origin[i] + pass.rot[i] * link.com;
        let i_link = pass.rot[i] * link.inertia * pass.rot[i].transpose();
        let m_sub = cm[i + 1];
        let m_tot = link.mass + m_sub;
        let c_tot = if m_sub > 0.0 {
            (link.mass * c_link + m_sub * cc[i + 1]) / m_tot
        } else {
            c_link
        };
        let shift = |inertia: nalgebra::Matrix3<f64>, m: f64, d: Vector3<f64>| {
            // Parallel axis: inertia about com shifted by d.
            inertia + m * (d.norm_squared() * nalgebra::Matrix3::identity() - d * d.transpose())
        };
        let mut i_tot = shift(i_link, link.mass, c_link - c_tot);
        if m_sub > 0.0 {
            i_tot += shift(ci[i + 1], m_sub, cc[i + 1] - c_tot);
        }
        cm[i] = m_tot;
        cc[i] = c_tot;
        ci[i] = i_tot;
    }

    let mut m = DMatrix::zeros(n, n);
    for i in 1..=n {
        let zi = pass.z[i - 1];
        let oi = pass.origin[i - 1];
        // Unit acceleration of joint i: spatial force of the composite body.
        let f = cm[i] * zi.cross(&(cc[i] - oi));
        let moment_oi = ci[i] * zi + (cc[i] - oi).cross(&f);
        for j in (1..=i).rev() {
            let oj = pass.origin[j - 1];
            let moment_oj = moment_oi + (oi - oj).cross(&f);
            let val = pass.z[j - 1].dot(&moment_oj);
            m[(i - 1, j - 1)] = val;
            m[(j - 1, i - 1)] = val;
        }
    }
    m
}

/// Coriolis matrix C(q, qd) from Christoffel symbols, with dM/dq by central
/// differences of the CRBA. Satisfies C*qd = coriolis_vector and makes
/// Mdot - 2C skew-symmetric.
pub fn coriolis_matrix(
    chain: &KinematicChain,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> DMatrix<f64> {
    let n = chain.n();
    let h = 1e-5;
    let mut dm = Vec::with_capacity(n);
    let mut qp = q.clone();
    for k in 0..n {
        qp[k] = q[k] + h;
        let m_plus = crba(chain, &qp);
        qp[k] = q[k] - h;
        let m_minus = crba(chain, &qp);
        qp[k] = q[k];
        dm.push((m_plus - m_minus) / (2.0 * h));
    }
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut sum = 0.0;
            for k in 0..n {
                sum += 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qd[k];
            }
            c[(i, j)] = sum;
        }
    }
    c
}
