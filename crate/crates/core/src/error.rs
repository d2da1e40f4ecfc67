use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("labeling error: {0}")]
    Labeling(String),

    #[error("registration error: label `{label}` is not registered for `{attribute}`")]
    Registration { attribute: String, label: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("scoring error: actor `{actor}` has no subcategory `{label}`")]
    Scoring { actor: String, label: String },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("Hessian is not positive definite (curvature {curvature:e} along a search direction); increase damping")]
    Definiteness { curvature: f64 },

    #[error("reference task error: {0}")]
    Task(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("bounds error: requested {requested} of {available}")]
    Bounds { requested: usize, available: usize },

    #[error("missing path: {}", .0.display())]
    MissingPath(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for anything the
    /// user can fix in their configuration or inputs, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::MissingPath(_)
            | Error::Registration { .. }
            | Error::Domain(_)
            | Error::Labeling(_) => 2,
            _ => 3,
        }
    }
}
