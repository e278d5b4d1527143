//! Run records written next to every output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use auxfuse_core::config::RunConfig;

use crate::error::CliError;

/// Where a run's configuration came from.
pub struct ConfigSource<'a> {
    pub config: &'a RunConfig,
    /// Verbatim text of the file, if one was given.
    pub text: Option<&'a str>,
}

/// Write `{name}_provenance.txt`, `{name}_config.toml` (the input as given)
/// and `{name}_resolved.toml` into `dir`. Contents are deterministic.
pub fn write(dir: &Path, name: &str, seed: u64, source: ConfigSource<'_>) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut rec = String::new();
    let _ = writeln!(rec, "tool=auxfuse");
    let _ = writeln!(rec, "cli_version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(rec, "core_version={}", auxfuse_core::VERSION);
    let _ = writeln!(rec, "seed={seed}");
    let _ = writeln!(rec, "command={}", args.join(" "));
    fs::write(dir.join(format!("{name}_provenance.txt")), rec)?;
    let echoed = source.text.map(str::to_owned).unwrap_or_else(|| "# no config file; defaults in effect\n".into());
    fs::write(dir.join(format!("{name}_config.toml")), echoed)?;
    fs::write(dir.join(format!("{name}_resolved.toml")), source.config.to_toml())?;
    Ok(())
}
