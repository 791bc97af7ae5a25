use std::fmt;

use qmic_core::Error;
use serde::Serialize;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Error record written to stderr as one JSON line.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            kind: "config",
            field: Some(field.into()),
            message: message.into(),
            exit_code: EXIT_CONFIG,
        }
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        CliError {
            kind: "io",
            field: None,
            message: format!("{}: {e}", path.display()),
            exit_code: EXIT_CONFIG,
        }
    }

    /// Wraps a library error, prefixing the offending field with `section`.
    pub fn from_core(section: &str, e: Error) -> Self {
        let exit_code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_CONFIG };
        let kind = if e.is_numerical() { "numerical" } else { "input" };
        let field = match &e {
            Error::Domain { field, .. } if section.is_empty() => Some(field.to_string()),
            Error::Domain { field, .. } => Some(format!("{section}.{field}")),
            _ => None,
        };
        let message = match &e {
            Error::Domain { reason, .. } => reason.clone(),
            other => other.to_string(),
        };
        CliError {
            kind,
            field,
            message,
            exit_code,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", self.message))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{}: {}", field, self.message),
            None => f.write_str(&self.message),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a section name to library errors.
pub trait Context<T> {
    fn section(self, section: &str) -> CliResult<T>;
}

impl<T> Context<T> for qmic_core::Result<T> {
    fn section(self, section: &str) -> CliResult<T> {
        self.map_err(|e| CliError::from_core(section, e))
    }
}
