use std::fmt;
use std::path::Path;

/// A failure reported as a single `error: <kind>: <message>` line.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: &'static str, message: impl fmt::Display) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    pub fn usage(message: impl fmt::Display) -> Self {
        Self::new("usage", message)
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    /// A file that was read but did not match the expected format.
    pub fn schema(path: &Path, e: impl fmt::Display) -> Self {
        Self::new("schema", format!("{}: {e}", path.display()))
    }

    /// Exit status: 2 for bad invocations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        if self.kind == "usage" {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Keep the report on one line whatever the source error looked like.
        let flat = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error: {}: {flat}", self.kind)
    }
}
