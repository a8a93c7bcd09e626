use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid layer stack: {}", format_violations(.0))]
    InvalidStack(Vec<Violation>),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Matching system too ill-conditioned to trust (estimate after equilibration).
    #[error(
        "numerically degenerate matching system for l = {l} (condition estimate {condition:.3e})"
    )]
    NumericalDegeneracy { l: usize, condition: f64 },

    #[error("partial-wave series did not converge by l = {l_max}")]
    TruncationNotConverged { l_max: usize },

    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed input: {0}")]
    Parse(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
