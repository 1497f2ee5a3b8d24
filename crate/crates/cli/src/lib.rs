//! Operator entry point: `prompt-atlas {generate|embed|index|layout|serve|bench}`.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run, BenchMode, Cli, Command, Report};
pub use config::{CliConfig, Overrides};
pub use error::{CliError, CliResult, EXIT_BACKEND, EXIT_OK, EXIT_VALIDATION};

use std::io::Write;

use clap::Parser;

/// Parses `args`, runs the command and writes the report. Returns the
/// process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let result = cli.resolve_config().and_then(|config| run(&cli, config));
    match result {
        Ok(report) => {
            let _ = if cli.json {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&report.value).expect("report serializes"))
            } else {
                writeln!(stdout, "{}", report.text.trim_end())
            };
            EXIT_OK
        }
        Err(e) => {
            let code = e.exit_code();
            let _ = writeln!(stderr, "error: {e}");
            if cli.json {
                let body = serde_json::json!({ "error": { "message": e.to_string(), "exit_code": code } });
                let _ = writeln!(stdout, "{body}");
            }
            code
        }
    }
}
