use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector3};

use crate::{Result, SapError};

/// Per-link parameters: one joint transform plus the link's inertial data.
///
/// The four frame scalars follow the Denavit-Hartenberg convention with the
/// joint-to-joint transform `RotZ(theta_off + q) * TransZ(d) * TransX(a) *
/// RotX(alpha)`, so the origin of the last frame lands on the tool point and
/// no separate tool transform is needed.
#[derive(Debug, Clone)]
pub struct LinkParam {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_off: f64,
    /// Link mass, kg.
    pub mass: f64,
    /// Center of mass in the link frame, m.
    pub com: Vector3<f64>,
    /// Inertia about the center of mass, link frame, kg m^2.
    pub inertia: Matrix3<f64>,
    /// Joint position limits, rad.
    pub q_min: f64,
    pub q_max: f64,
    /// Joint velocity limit, rad/s.
    pub v_max: f64,
}

impl LinkParam {
    fn validate(&self, idx: usize) -> Result<()> {
        let fail = |msg: String| {
            Err(SapError::Argument(format!("link {}: {}", idx + 1, msg)))
        };
        if !(self.mass > 0.0) {
            return fail(format!("mass must be positive, got {}", self.mass));
        }
        if (self.inertia - self.inertia.transpose()).norm() > 1e-12 {
            return fail("inertia matrix is not symmetric".into());
        }
        let eig = self.inertia.symmetric_eigenvalues();
        let (i1, i2, i3) = (eig[0], eig[1], eig[2]);
        if i1 <= 0.0 || i2 <= 0.0 || i3 <= 0.0 {
            return fail("inertia matrix is not positive definite".into());
        }
        // Principal moments of a physical body satisfy the triangle inequality.
        let tol = 1e-9 * (i1 + i2 + i3);
        if i1 + i2 + tol < i3 || i1 + i3 + tol < i2 || i2 + i3 + tol < i1 {
            return fail("principal moments violate the triangle inequality".into());
        }
        if !(self.q_min < self.q_max) {
            return fail(format!(
                "joint limits must satisfy lower < upper, got [{}, {}]",
                self.q_min, self.q_max
            ));
        }
        if !(self.v_max > 0.0) {
            return fail("velocity limit must be positive".into());
        }
        Ok(())
    }
}

/// Parametric description of an n-DOF serial arm.
#[derive(Debug, Clone)]
pub struct KinematicChain {
    links: Vec<LinkParam>,
    gravity: Vector3<f64>,
}

impl KinematicChain {
    pub fn new(links: Vec<LinkParam>) -> Result<Self> {
        if links.len() < 2 {
            return Err(SapError::Argument(format!(
                "a chain needs at least 2 links, got {}",
                links.len()
            )));
        }
        for (i, link) in links.iter().enumerate() {
            link.validate(i)?;
        }
        Ok(Self {
            links,
            gravity: Vector3::new(0.0, 0.0, -9.81),
        })
    }

    pub fn with_gravity(mut self, gravity: Vector3<f64>) -> Self {
        self.gravity = gravity;
        self
    }

    pub fn n(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[LinkParam] {
        &self.links
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    pub fn joint_lower(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.links.iter().map(|l| l.q_min))
    }

    pub fn joint_upper(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.links.iter().map(|l| l.q_max))
    }

    pub fn velocity_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.links.iter().map(|l| l.v_max))
    }

    pub fn clamp_to_limits(&self, q: &mut DVector<f64>) {
        for (i, link) in self.links.iter().enumerate() {
            q[i] = q[i].clamp(link.q_min, link.q_max);
        }
    }

    pub fn within_limits(&self, q: &DVector<f64>) -> bool {
        self.links
            .iter()
            .enumerate()
            .all(|(i, l)| q[i] >= l.q_min && q[i] <= l.q_max)
    }

    /// Loads a chain from a line-oriented parameter file.
    ///
    /// One link per line:
    /// `a alpha d theta_off mass cx cy cz Ixx Iyy Izz Ixy Ixz Iyz qmin qmax vmax`
    /// (SI units, `#` starts a comment).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    pub fn from_str_named(text: &str, name: &str) -> Result<Self> {
        let mut links = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| SapError::Parse {
                        path: name.to_string(),
                        line: lineno + 1,
                        msg: format!("invalid number `{tok}`"),
                    })
                })
                .collect::<Result<_>>()?;
            if fields.len() != 17 {
                return Err(SapError::Parse {
                    path: name.to_string(),
                    line: lineno + 1,
                    msg: format!("expected 17 fields, got {}", fields.len()),
                });
            }
            let f = &fields;
            links.push(LinkParam {
                a: f[0],
                alpha: f[1],
                d: f[2],
                theta_off: f[3],
                mass: f[4],
                com: Vector3::new(f[5], f[6], f[7]),
                inertia: Matrix3::new(
                    f[8], f[11], f[12], //
                    f[11], f[9], f[13], //
                    f[12], f[13], f[10],
                ),
                q_min: f[14],
                q_max: f[15],
                v_max: f[16],
            });
        }
        Self::new(links)
    }
}
