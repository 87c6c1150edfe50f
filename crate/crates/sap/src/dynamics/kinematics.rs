use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};

use super::chain::KinematicChain;

/// Results of a forward pass over the chain: world-frame link rotations,
/// frame origins and joint axes, optionally with link velocities and
/// accelerations.
///
/// Index 0 is the base frame; index i (1..=n) is the frame of link i.
/// Joint i rotates about `z[i-1]` through `origin[i-1]`.
pub struct FkPass {
    pub rot: Vec<Matrix3<f64>>,
    pub origin: Vec<Vector3<f64>>,
    pub z: Vec<Vector3<f64>>,
    /// Link angular velocities (omega[0] = 0), filled by velocity pass.
    pub omega: Vec<Vector3<f64>>,
    /// Frame-origin linear velocities, filled by velocity pass.
    pub v: Vec<Vector3<f64>>,
    /// Link angular accelerations, filled by acceleration pass.
    pub alpha: Vec<Vector3<f64>>,
    /// Frame-origin linear accelerations, filled by acceleration pass.
    pub a: Vec<Vector3<f64>>,
}

fn joint_transform(
    link: &super::chain::LinkParam,
    q: f64,
) -> (Matrix3<f64>, Vector3<f64>) {
    let theta = link.theta_off + q;
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = link.alpha.sin_cos();
    let rz = Matrix3::new(ct, -st, 0.0, st, ct, 0.0, 0.0, 0.0, 1.0);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let p = rz * Vector3::new(link.a, 0.0, link.d);
    (rz * rx, p)
}

impl FkPass {
    /// Position-level pass: rotations, origins, joint axes.
    pub fn positions(chain: &KinematicChain, q: &DVector<f64>) -> Self {
        let n = chain.n();
        let mut rot = Vec::with_capacity(n + 1);
        let mut origin = Vec::with_capacity(n + 1);
        let mut z = Vec::with_capacity(n + 1);
        rot.push(Matrix3::identity());
        origin.push(Vector3::zeros());
        z.push(Vector3::z());
        for (i, link) in chain.links().iter().enumerate() {
            let (r_local, p_local) = joint_transform(link, q[i]);
            let r = rot[i] * r_local;
            let o = origin[i] + rot[i] * p_local;
            z.push(r.column(2).into_owned());
            rot.push(r);
            origin.push(o);
        }
        Self {
            rot,
            origin,
            z,
            omega: Vec::new(),
            v: Vec::new(),
            alpha: Vec::new(),
            a: Vec::new(),
        }
    }

    /// Adds link angular velocities and frame-origin velocities.
    pub fn with_velocities(mut self, qd: &DVector<f64>) -> Self {
        let n = self.rot.len() - 1;
        self.omega = vec![Vector3::zeros(); n + 1];
        self.v = vec![Vector3::zeros(); n + 1];
        for i in 1..=n {
            self.omega[i] = self.omega[i - 1] + self.z[i - 1] * qd[i - 1];
            let r = self.origin[i] - self.origin[i - 1];
            self.v[i] = self.v[i - 1] + self.omega[i].cross(&r);
        }
        self
    }

    /// Adds link angular and frame-origin linear accelerations.
    ///
    /// `base_acc` is the linear acceleration of the base; passing `-gravity`
    /// folds gravitational forces into the Newton-Euler force balance.
    pub fn with_accelerations(
        mut self,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        base_acc: Vector3<f64>,
    ) -> Self {
        let n = self.rot.len() - 1;
        debug_assert!(!self.omega.is_empty(), "velocity pass required first");
        self.alpha = vec![Vector3::zeros(); n + 1];
        self.a = vec![Vector3::zeros(); n + 1];
        self.a[0] = base_acc;
        for i in 1..=n {
            let zi = self.z[i - 1];
            self.alpha[i] =
                self.alpha[i - 1] + zi * qdd[i - 1] + self.omega[i - 1].cross(&(zi * qd[i - 1]));
            let r = self.origin[i] - self.origin[i - 1];
            self.a[i] = self.a[i - 1]
                + self.alpha[i].cross(&r)
                + self.omega[i].cross(&self.omega[i].cross(&r));
        }
        self
    }

    pub fn n(&self) -> usize {
        self.rot.len() - 1
    }

    pub fn ee_position(&self) -> Vector3<f64> {
        *self.origin.last().unwrap()
    }

    pub fn ee_orientation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(self.rot.last().unwrap())
    }

    pub fn ee_velocity(&self) -> Vector3<f64> {
        *self.v.last().unwrap()
    }

    /// Velocity of a point rigidly attached to `link` (1..=n).
    pub fn point_velocity(&self, link: usize, p: &Vector3<f64>) -> Vector3<f64> {
        self.v[link] + self.omega[link].cross(&(p - self.origin[link]))
    }

    /// 3xn position Jacobian of a point attached to `link` (1..=n): columns
    /// j >= link are zero.
    pub fn position_jacobian(&self, link: usize, p: &Vector3<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut j = DMatrix::zeros(3, n);
        for col in 0..link.min(n) {
            let c = self.z[col].cross(&(p - self.origin[col]));
            j.column_mut(col).copy_from(&c);
        }
        j
    }

    /// 3xn angular Jacobian of link `link` (1..=n).
    pub fn angular_jacobian(&self, link: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut j = DMatrix::zeros(3, n);
        for col in 0..link.min(n) {
            j.column_mut(col).copy_from(&self.z[col]);
        }
        j
    }

    /// Time derivative of the end-effector position Jacobian.
    ///
    /// Requires the velocity pass. Column j of J is `z_j x (p - o_j)`; its
    /// derivative follows from the link velocity recursion.
    pub fn ee_jacobian_dot(&self) -> DMatrix<f64> {
        let n = self.n();
        let p = self.ee_position();
        let vp = self.ee_velocity();
        let mut jd = DMatrix::zeros(3, n);
        for col in 0..n {
            let zd = self.omega[col].cross(&self.z[col]);
            let c = zd.cross(&(p - self.origin[col])) + self.z[col].cross(&(vp - self.v[col]));
            jd.column_mut(col).copy_from(&c);
        }
        jd
    }

    /// Bias acceleration `Jdot(q) * qdot` of a point attached to `link`,
    /// i.e. its acceleration when all joint accelerations are zero.
    /// Requires an acceleration pass run with `qdd = 0` and `base_acc = 0`.
    pub fn point_bias_acceleration(&self, link: usize, p: &Vector3<f64>) -> Vector3<f64> {
        let r = p - self.origin[link];
        self.a[link] + self.alpha[link].cross(&r) + self.omega[link].cross(&self.omega[link].cross(&r))
    }
}
