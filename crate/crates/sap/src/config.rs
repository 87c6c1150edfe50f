//! Scenario configuration: flat `key = value` text with `[section]` headers.
//!
//! Built-in defaults encode the reference experiment parameters; a file
//! overrides defaults, and command-line flags override the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Matrix3, Vector3};

use crate::planner::NmpcConfig;
use crate::safety::LowLevelGains;
use crate::{Result, SapError};

pub const DOF: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Controller {
    NmpcOnly,
    NmpcEcbf,
}

impl Controller {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nmpc_only" => Ok(Self::NmpcOnly),
            "nmpc_ecbf" => Ok(Self::NmpcEcbf),
            other => Err(SapError::Config {
                key: "controller".into(),
                msg: format!("unknown controller '{other}' (nmpc_only | nmpc_ecbf)"),
            }),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NmpcOnly => "nmpc_only",
            Self::NmpcEcbf => "nmpc_ecbf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    Oracle,
    ConstantVelocity,
}

impl Predictor {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "constant_velocity" => Ok(Self::ConstantVelocity),
            other => Err(SapError::Config {
                key: "predictor".into(),
                msg: format!("unknown predictor '{other}' (oracle | constant_velocity)"),
            }),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::ConstantVelocity => "constant_velocity",
        }
    }
}

/// Complete description of one simulated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub robot_file: PathBuf,
    pub trajectory_file: PathBuf,
    pub bone_map_file: PathBuf,
    pub controller: Controller,
    pub predictor: Predictor,
    /// Inf-norm bound of the oracle predictor noise, m.
    pub noise_bound: f64,
    /// Recognizer label-flip probability.
    pub p_err: f64,
    pub seed: u64,
    pub trial_count: usize,
    /// Start joints for single runs.
    pub q0: DVector<f64>,
    /// Uniform sampling box for randomized suite start positions.
    pub suite_q_lo: DVector<f64>,
    pub suite_q_hi: DVector<f64>,
    pub nmpc: NmpcConfig,
    pub gains: LowLevelGains,
    /// Barrier gains [k1, k2].
    pub k_b: [f64; 2],
    /// Per-axis force box half-width, N.
    pub force_limit: f64,
    /// Goal radius activating the convergence row, m.
    pub clf_radius: f64,
    /// Extra clearance added to d_safe inside the safety filter, m.
    /// Absorbs the zero-order-hold overshoot of the 5 ms filter period and
    /// the brief excursions while an infeasible filter QP falls back to
    /// full-authority evasion.
    pub filter_margin: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let q0 = DVector::from_vec(vec![0.5, -0.3, 0.0, 1.8, 0.0, 0.5, 0.0]);
        Self {
            robot_file: "data/robots/reference_arm.txt".into(),
            trajectory_file: "data/trajectories/screwdriver_task.csv".into(),
            bone_map_file: "data/bone_map.txt".into(),
            controller: Controller::NmpcEcbf,
            predictor: Predictor::Oracle,
            noise_bound: 0.02,
            p_err: 0.0,
            seed: 1,
            trial_count: 100,
            suite_q_lo: q0.map(|v| v - 0.3),
            suite_q_hi: q0.map(|v| v + 0.3),
            q0,
            nmpc: NmpcConfig::reference(DOF),
            gains: LowLevelGains::reference(),
            k_b: [7.0, 7.0],
            force_limit: 40.0,
            clf_radius: 0.15,
            filter_margin: 0.025,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim().parse().map_err(|_| SapError::Config {
        key: key.into(),
        msg: format!("expected a number, got '{v}'"),
    })
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim().parse().map_err(|_| SapError::Config {
        key: key.into(),
        msg: format!("expected a nonnegative integer, got '{v}'"),
    })
}

fn parse_vec(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|p| parse_f64(key, p)).collect()
}

fn parse_vec_n(key: &str, v: &str, n: usize) -> Result<Vec<f64>> {
    let out = parse_vec(key, v)?;
    if out.len() != n {
        return Err(SapError::Config {
            key: key.into(),
            msg: format!("expected {n} comma-separated values, got {}", out.len()),
        });
    }
    Ok(out)
}

impl ScenarioConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SapError::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        let mut cfg = Self::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(SapError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("expected 'key = value', got '{line}'"),
                });
            };
            let key = format!("{section}.{}", k.trim());
            cfg.set(&key, v.trim()).map_err(|e| SapError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `section.key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "files.robot" => self.robot_file = v.into(),
            "files.trajectory" => self.trajectory_file = v.into(),
            "files.bone_map" => self.bone_map_file = v.into(),
            "run.controller" => self.controller = Controller::parse(v)?,
            "run.predictor" => self.predictor = Predictor::parse(v)?,
            "run.noise_bound" => self.noise_bound = parse_f64(key, v)?,
            "run.p_err" => self.p_err = parse_f64(key, v)?,
            "run.seed" => {
                self.seed = v.trim().parse().map_err(|_| SapError::Config {
                    key: key.into(),
                    msg: format!("expected an unsigned integer, got '{v}'"),
                })?
            }
            "run.trial_count" => self.trial_count = parse_usize(key, v)?,
            "run.q0" => self.q0 = DVector::from_vec(parse_vec_n(key, v, DOF)?),
            "suite.q_lo" => self.suite_q_lo = DVector::from_vec(parse_vec_n(key, v, DOF)?),
            "suite.q_hi" => self.suite_q_hi = DVector::from_vec(parse_vec_n(key, v, DOF)?),
            "nmpc.horizon" => self.nmpc.horizon = parse_usize(key, v)?,
            "nmpc.ts" => self.nmpc.ts = parse_f64(key, v)?,
            "nmpc.qp" => self.nmpc.qp = parse_vec_n(key, v, 6)?.try_into().unwrap(),
            "nmpc.qv" => self.nmpc.qv = parse_vec_n(key, v, DOF)?,
            "nmpc.rp" => self.nmpc.rp = parse_vec_n(key, v, 6)?.try_into().unwrap(),
            "nmpc.rv" => self.nmpc.rv = parse_vec_n(key, v, DOF)?,
            "nmpc.d_safe" => self.nmpc.d_safe = parse_f64(key, v)?,
            "nmpc.u_max" => self.nmpc.u_max = parse_vec_n(key, v, DOF)?,
            "nmpc.link_radii" => self.nmpc.link_radii = parse_vec_n(key, v, DOF)?,
            "solver.eps_a" => self.nmpc.solver.eps_a = parse_f64(key, v)?,
            "solver.eps_b" => self.nmpc.solver.eps_b = parse_f64(key, v)?,
            "solver.max_inner" => self.nmpc.solver.max_inner = parse_usize(key, v)?,
            "solver.lbfgs_mem" => self.nmpc.solver.lbfgs_mem = parse_usize(key, v)?,
            "solver.c0" => self.nmpc.solver.c0 = parse_f64(key, v)?,
            "solver.growth" => self.nmpc.solver.growth = parse_f64(key, v)?,
            "solver.max_outer" => self.nmpc.solver.max_outer = parse_usize(key, v)?,
            "safety.lambda" => self.gains.lambda = parse_f64(key, v)?,
            "safety.k_z" => self.gains.k_z = parse_f64(key, v)?,
            "safety.c1" => self.gains.c1 = parse_f64(key, v)?,
            "safety.k_d" => {
                let d = parse_vec_n(key, v, 3)?;
                self.gains.k_d = Matrix3::from_diagonal(&Vector3::new(d[0], d[1], d[2]));
            }
            "safety.k_b" => self.k_b = parse_vec_n(key, v, 2)?.try_into().unwrap(),
            "safety.force_limit" => self.force_limit = parse_f64(key, v)?,
            "safety.clf_radius" => self.clf_radius = parse_f64(key, v)?,
            "safety.filter_margin" => self.filter_margin = parse_f64(key, v)?,
            other => {
                return Err(SapError::Config {
                    key: other.into(),
                    msg: "unknown configuration key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(SapError::Config {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if !(0.0..=1.0).contains(&self.p_err) {
            return bad("run.p_err", "must be in [0, 1]");
        }
        if self.noise_bound < 0.0 {
            return bad("run.noise_bound", "must be nonnegative");
        }
        if self.trial_count == 0 {
            return bad("run.trial_count", "must be at least 1");
        }
        if self
            .suite_q_lo
            .iter()
            .zip(self.suite_q_hi.iter())
            .any(|(l, h)| l > h)
        {
            return bad("suite.q_lo", "lower bound exceeds suite.q_hi");
        }
        if self.force_limit <= 0.0 {
            return bad("safety.force_limit", "must be positive");
        }
        if self.clf_radius < 0.0 {
            return bad("safety.clf_radius", "must be nonnegative");
        }
        if self.filter_margin < 0.0 {
            return bad("safety.filter_margin", "must be nonnegative");
        }
        if self.k_b[0] <= 0.0 || self.k_b[1] <= 0.0 {
            return bad("safety.k_b", "barrier gains must be positive");
        }
        self.gains.validate()?;
        self.nmpc.validate(DOF)?;
        Ok(())
    }

    /// Renders the full configuration in the file format; parsing the
    /// result reproduces the configuration.
    pub fn to_config_string(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = String::new();
        let _ = writeln!(s, "[files]");
        let _ = writeln!(s, "robot = {}", self.robot_file.display());
        let _ = writeln!(s, "trajectory = {}", self.trajectory_file.display());
        let _ = writeln!(s, "bone_map = {}", self.bone_map_file.display());
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "controller = {}", self.controller.as_str());
        let _ = writeln!(s, "predictor = {}", self.predictor.as_str());
        let _ = writeln!(s, "noise_bound = {}", self.noise_bound);
        let _ = writeln!(s, "p_err = {}", self.p_err);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "trial_count = {}", self.trial_count);
        let _ = writeln!(s, "q0 = {}", join(self.q0.as_slice()));
        let _ = writeln!(s, "\n[suite]");
        let _ = writeln!(s, "q_lo = {}", join(self.suite_q_lo.as_slice()));
        let _ = writeln!(s, "q_hi = {}", join(self.suite_q_hi.as_slice()));
        let _ = writeln!(s, "\n[nmpc]");
        let _ = writeln!(s, "horizon = {}", self.nmpc.horizon);
        let _ = writeln!(s, "ts = {}", self.nmpc.ts);
        let _ = writeln!(s, "qp = {}", join(&self.nmpc.qp));
        let _ = writeln!(s, "qv = {}", join(&self.nmpc.qv));
        let _ = writeln!(s, "rp = {}", join(&self.nmpc.rp));
        let _ = writeln!(s, "rv = {}", join(&self.nmpc.rv));
        let _ = writeln!(s, "d_safe = {}", self.nmpc.d_safe);
        let _ = writeln!(s, "u_max = {}", join(&self.nmpc.u_max));
        let _ = writeln!(s, "link_radii = {}", join(&self.nmpc.link_radii));
        let _ = writeln!(s, "\n[solver]");
        let _ = writeln!(s, "eps_a = {}", self.nmpc.solver.eps_a);
        let _ = writeln!(s, "eps_b = {}", self.nmpc.solver.eps_b);
        let _ = writeln!(s, "max_inner = {}", self.nmpc.solver.max_inner);
        let _ = writeln!(s, "lbfgs_mem = {}", self.nmpc.solver.lbfgs_mem);
        let _ = writeln!(s, "c0 = {}", self.nmpc.solver.c0);
        let _ = writeln!(s, "growth = {}", self.nmpc.solver.growth);
        let _ = writeln!(s, "max_outer = {}", self.nmpc.solver.max_outer);
        let _ = writeln!(s, "\n[safety]");
        let _ = writeln!(s, "lambda = {}", self.gains.lambda);
        let _ = writeln!(s, "k_z = {}", self.gains.k_z);
        let _ = writeln!(s, "c1 = {}", self.gains.c1);
        let kd = self.gains.k_d;
        let _ = writeln!(s, "k_d = {},{},{}", kd[(0, 0)], kd[(1, 1)], kd[(2, 2)]);
        let _ = writeln!(s, "k_b = {},{}", self.k_b[0], self.k_b[1]);
        let _ = writeln!(s, "force_limit = {}", self.force_limit);
        let _ = writeln!(s, "clf_radius = {}", self.clf_radius);
        let _ = writeln!(s, "filter_margin = {}", self.filter_margin);
        s
    }
}
