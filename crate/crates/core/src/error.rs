use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid field `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("binding error for axis `{axis}`: {reason}")]
    Binding { axis: String, reason: String },

    #[error("no uKernel candidate fits shared memory ({capacity} bytes); smallest staged footprint is {smallest} bytes")]
    Capacity { capacity: u64, smallest: u64 },

    #[error("empty candidate set after relaxation: {constraint}")]
    EmptyCandidates { constraint: String },

    #[error("empty program pool for {axis}={extent}: no uKernel combination covers the main axis; relax the filters or widen the sweep")]
    EmptyPool { axis: String, extent: u64 },

    #[error("missing cached metrics on a plan part")]
    MissingMetrics,

    #[error("empty workload: memory latency is zero")]
    EmptyWorkload,

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit status: 1 empty result, 2 bad input, 3 broken invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Capacity { .. } | Error::EmptyCandidates { .. } | Error::EmptyPool { .. } => 1,
            Error::Invariant(_) => 3,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
