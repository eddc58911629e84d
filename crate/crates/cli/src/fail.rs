use std::fmt;
use std::path::Path;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_GRADCHECK: i32 = 5;

/// A message paired with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub msg: String,
}

impl Failure {
    pub fn config(msg: impl fmt::Display) -> Self {
        Failure {
            code: EXIT_CONFIG,
            msg: msg.to_string(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure {
            code: EXIT_IO,
            msg: format!("{}: {e}", path.display()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<ptmfuse::Error> for Failure {
    fn from(e: ptmfuse::Error) -> Self {
        use ptmfuse::Error as E;
        let code = match &e {
            E::Io(_) => EXIT_IO,
            E::Numeric { .. } | E::Divergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}
