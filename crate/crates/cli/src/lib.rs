//! Scenario parsing, output plumbing and command implementations behind the
//! `modesep` binary; exposed as a library so integration tests can validate
//! scenario documents directly.

pub mod commands;
pub mod output;
pub mod scenario;

/// An error with the process exit code it maps to: 2 for validation
/// failures, 3 for numerical or calibration failures.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}
