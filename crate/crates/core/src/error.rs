use thiserror::Error;

use crate::weight_model::Diagnostic;

#[derive(Debug, Error)]
pub enum BssError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("weight function failed validation: {}", format_diagnostics(.0))]
    InvalidSpec(Vec<Diagnostic>),

    #[error("{op}: precondition violated: {detail}")]
    Precondition { op: &'static str, detail: String },

    #[error("quadrature did not reach relative tolerance {requested:e} (value {value:e}, error estimate {error:e})")]
    Quadrature {
        value: f64,
        error: f64,
        requested: f64,
    },

    #[error("{op}: {source}")]
    InOperation {
        op: &'static str,
        #[source]
        source: Box<BssError>,
    },

    #[error("integrand produced a non-finite value")]
    NonFiniteIntegrand,

    #[error("{op}: covariance is not numerically positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { op: &'static str, min_eigenvalue: f64 },

    #[error("{op}: series tail could not be certified: {detail}")]
    SeriesTail { op: &'static str, detail: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error("replication {replication} (seed {seed}) failed: {source}")]
    Replication {
        replication: usize,
        seed: u64,
        #[source]
        source: Box<BssError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl BssError {
    pub fn in_op(self, op: &'static str) -> Self {
        match self {
            e @ (BssError::InOperation { .. }
            | BssError::Precondition { .. }
            | BssError::NotPositiveDefinite { .. }
            | BssError::SeriesTail { .. }) => e,
            e => BssError::InOperation {
                op,
                source: Box::new(e),
            },
        }
    }

    /// Numerical failures (tolerance, embedding, series) as opposed to
    /// invalid input.
    pub fn is_numerical(&self) -> bool {
        match self {
            BssError::Quadrature { .. }
            | BssError::NonFiniteIntegrand
            | BssError::NotPositiveDefinite { .. }
            | BssError::SeriesTail { .. } => true,
            BssError::InOperation { source, .. } | BssError::Replication { source, .. } => {
                source.is_numerical()
            }
            _ => false,
        }
    }

    /// Name of the failing operation, when known.
    pub fn operation(&self) -> Option<&'static str> {
        match self {
            BssError::InOperation { op, .. }
            | BssError::Precondition { op, .. }
            | BssError::NotPositiveDefinite { op, .. }
            | BssError::SeriesTail { op, .. } => Some(op),
            BssError::Replication { source, .. } => source.operation(),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, BssError>;
