use std::fmt;
use std::path::Path;

/// Why a run failed, and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable or malformed input files: exit 1.
    Config(String),
    /// A solver or constructor rejected the problem: exit 2.
    Numeric(measure_mirror::Error),
    /// Artifacts were written but a checked bound failed: exit 3.
    Certificate(String),
}

impl Failure {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Config(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numeric(_) => 2,
            Failure::Certificate(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numeric(e) => write!(f, "numerical error: {e}"),
            Failure::Certificate(m) => write!(f, "certificate failed: {m}"),
        }
    }
}

impl From<measure_mirror::Error> for Failure {
    fn from(e: measure_mirror::Error) -> Self {
        Failure::Numeric(e)
    }
}
