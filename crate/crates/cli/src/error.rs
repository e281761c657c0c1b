use std::fmt;
use std::path::Path;

use serde_json::json;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub exit_code: u8,
    pub kind: String,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(kind: &str, message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_USAGE,
            kind: kind.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            exit_code: EXIT_FAILURE,
            kind: "io".into(),
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn missing_input(what: &str) -> Self {
        Self::usage("missing_input", format!("no value for {what}"))
    }

    pub fn to_json(&self) -> String {
        json!({
            "error": {
                "kind": self.kind,
                "message": self.message,
                "exit_code": self.exit_code,
            }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error ({}): {}", self.kind, self.message)
    }
}

impl From<cat_core::Error> for CliError {
    fn from(e: cat_core::Error) -> Self {
        Self {
            exit_code: EXIT_FAILURE,
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

/// Input paths are checked up front so a typo is a usage error, not a
/// computation failure halfway through.
pub fn require_exists(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage("missing_path", format!("{} does not exist", path.display())))
    }
}
