use thiserror::Error;

/// Errors produced by the planning, geometry and simulation layers.
#[derive(Error, Debug)]
pub enum SapError {
    #[error("argument error: {0}")]
    Argument(String),

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config error: key `{key}` ({msg})")]
    Config { key: String, msg: String },

    #[error("target unreachable: best position residual {residual:.6} m after {iters} iterations")]
    Unreachable { residual: f64, iters: usize },

    #[error("safety QP infeasible")]
    QpInfeasible,

    #[error("planner failed: {0}")]
    Planner(String),

    #[error("simulation fault at t={t:.3}s: {msg}")]
    SimFault { t: f64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
