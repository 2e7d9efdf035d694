//! Command-line front end for `levy-ou`: configuration parsing, seeding and CSV/JSON output.
//!
//! The binary is a thin wrapper over [`run`], so every command can be driven from tests.

pub mod args;
pub mod commands;
pub mod config;

use std::path::Path;

pub use args::{run, Cli, Command};
pub use config::{ModelConfig, SCHEMA};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "LEVY_OU_WORKERS";

/// Exit code when the checks find no invariant law or the experiment contradicts the prediction.
pub const EXIT_CONDITIONS: i32 = 2;
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(String),
    /// A library failure, tagged with the module that raised it.
    #[error("{module}: {source}")]
    Core {
        module: &'static str,
        #[source]
        source: levy_ou::Error,
    },
}

/// Tags library errors with their module.
pub(crate) trait Provenance<T> {
    fn within(self, module: &'static str) -> Result<T, CliError>;
}

impl<T> Provenance<T> for levy_ou::Result<T> {
    fn within(self, module: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { module, source })
    }
}

/// Writes `bytes` to `path`, or to stdout when there is none.
pub(crate) fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    use std::io::Write;
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
            }
            std::fs::write(p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
        }
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}
