//! Crate-wide error type.
//!
//! Errors are grouped by how a caller should react: `Config`-class errors
//! mean the request itself was malformed (bad dimensions, unsupported
//! modulation order, missing file), while `Numerical`-class errors mean the
//! computation was well-posed but failed at runtime (SVD non-convergence,
//! divergent training loss, corrupted checkpoint). The CLI maps the former
//! to exit code 2 and the latter to exit code 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector dimensions are inconsistent with the operation.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    /// An argument is outside the operation's domain (e.g. Q = 0 bits,
    /// padding target larger than the source).
    #[error("domain error in {op}: {details}")]
    Domain { op: &'static str, details: String },

    /// The experiment configuration is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A physical-layer constraint was violated (pilot power, phase-shifter
    /// modulus, transmit power).
    #[error("constraint violation: {0}")]
    Constraint(String),

    /// A numerical routine failed to converge or produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An input was degenerate in a way that makes the result meaningless
    /// (zero product norm, empty sample set).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A serialized artifact failed its integrity check.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A text artifact (CSV, config) could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code the CLI should use for this error: 2 for errors in the
    /// request (config/domain/shape/parse), 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape { .. }
            | Error::Domain { .. }
            | Error::Config(_)
            | Error::Parse { .. } => 2,
            Error::Constraint(_)
            | Error::Numerical(_)
            | Error::Degenerate(_)
            | Error::Integrity(_)
            | Error::Io(_) => 3,
        }
    }
}
