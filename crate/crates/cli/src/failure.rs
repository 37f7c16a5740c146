//! Exit codes and machine-readable error reports.

use coherence::CoherenceError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    Config,
    Unstable,
    Parity,
    OracleCap,
    Validation,
}

impl ErrorCode {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorCode::Config => 2,
            ErrorCode::Unstable => 3,
            ErrorCode::Parity => 4,
            ErrorCode::OracleCap => 5,
            ErrorCode::Validation => 6,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Failure {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub offending: Vec<Vec<usize>>,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Config, message)
    }

    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            offending: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self, "exit_code": self.code.exit_code() }).to_string()
    }
}

impl From<CoherenceError> for Failure {
    fn from(err: CoherenceError) -> Self {
        let message = err.to_string();
        match err {
            CoherenceError::Unstable { offending } => Failure {
                code: ErrorCode::Unstable,
                message,
                offending: offending.iter().map(|n| n.coords().to_vec()).collect(),
            },
            CoherenceError::Parity(_) => Failure::new(ErrorCode::Parity, message),
            CoherenceError::OracleCap { .. } => Failure::new(ErrorCode::OracleCap, message),
            CoherenceError::ObservableMeanMode(_) | CoherenceError::Solver(_) => {
                Failure::new(ErrorCode::Validation, message)
            }
            _ => Failure::config(message),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::config(format!("i/o error: {err}"))
    }
}
