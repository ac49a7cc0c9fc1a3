use hardy_factor::Error;
use serde::Serialize;

pub const VERIFICATION: i32 = 2;
pub const INFEASIBLE: i32 = 3;
pub const CONFIG: i32 = 4;

/// A run outcome that ends the process with a non-zero code.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { error: "config", message: message.into(), exit_code: CONFIG }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self { error: "verification", message: message.into(), exit_code: VERIFICATION }
    }

    pub fn infeasible(message: impl Into<String>) -> Self {
        Self { error: "infeasible", message: message.into(), exit_code: INFEASIBLE }
    }

    pub fn io(e: std::io::Error, what: &str) -> Self {
        Self { error: "io", message: format!("{what}: {e}"), exit_code: CONFIG }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::InvalidFamily(_) => Self { error: "invalid-family", message, exit_code: VERIFICATION },
            Error::SignsNotFound(_) => Self { error: "signs-not-found", message, exit_code: INFEASIBLE },
            Error::Infeasible(_) => Self { error: "infeasible", message, exit_code: INFEASIBLE },
            Error::DegenerateBlockDiagonal(_) | Error::DegenerateDiagonal(_) => {
                Self { error: "degenerate", message, exit_code: INFEASIBLE }
            }
            Error::ResolutionExceeded { .. } => Self { error: "resolution-exceeded", message, exit_code: CONFIG },
            Error::EnumerationCap { .. } => Self { error: "enumeration-cap", message, exit_code: CONFIG },
            Error::Precondition(_) => Self { error: "precondition", message, exit_code: CONFIG },
            _ => Self::config(message),
        }
    }
}
