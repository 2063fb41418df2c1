//! Key=value run configuration with fail-fast unknown-key rejection.
//!
//! Precedence: built-in defaults, then the `--config` file, then CLI flags.
//! Every run echoes its fully resolved configuration into the output
//! directory as `config.resolved`, in the same key=value format, so a run is
//! reproducible from that file alone.

use crate::CliError;
use lapformer_core::block::AttentionMode;
use lapformer_core::lm::LrSchedule;

pub trait Settings {
    /// Known keys, in echo order.
    fn keys(&self) -> &'static [&'static str];

    /// Sets one known key from its string form.
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError>;

    /// Current value of a known key, in string form.
    fn get(&self, key: &str) -> String;

    /// Applies one key=value pair; unknown keys are rejected.
    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !self.keys().contains(&key) {
            return Err(CliError::Usage(format!("unknown configuration key {key:?}")));
        }
        self.set(key, value)
    }

    /// Loads a key=value file (blank lines and `#` comments skipped).
    fn load_file(&mut self, path: &std::path::Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Core(lapformer_core::Error::Io(e)))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The resolved configuration in reloadable key=value form.
    fn echo(&self) -> String {
        let mut out = String::new();
        for key in self.keys() {
            out.push_str(key);
            out.push('=');
            out.push_str(&self.get(key));
            out.push('\n');
        }
        out
    }
}

pub fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| CliError::Usage(format!("invalid value for {key}: {e}")))
}

pub fn parse_mode(key: &str, value: &str) -> Result<AttentionMode, CliError> {
    match value {
        "standard" => Ok(AttentionMode::Standard),
        "diffusion" => Ok(AttentionMode::Diffusion),
        other => Err(CliError::Usage(format!(
            "invalid value for {key}: expected standard|diffusion, got {other:?}"
        ))),
    }
}

pub fn mode_name(mode: AttentionMode) -> &'static str {
    match mode {
        AttentionMode::Standard => "standard",
        AttentionMode::Diffusion => "diffusion",
    }
}

pub fn parse_schedule(key: &str, value: &str) -> Result<LrSchedule, CliError> {
    match value {
        "constant" => Ok(LrSchedule::Constant),
        "cosine" => Ok(LrSchedule::Cosine),
        other => Err(CliError::Usage(format!(
            "invalid value for {key}: expected constant|cosine, got {other:?}"
        ))),
    }
}

pub fn schedule_name(s: LrSchedule) -> &'static str {
    match s {
        LrSchedule::Constant => "constant",
        LrSchedule::Cosine => "cosine",
    }
}

/// Parses a comma-separated seed list like `1,2,3`.
pub fn parse_seeds(key: &str, value: &str) -> Result<Vec<u64>, CliError> {
    let seeds: Result<Vec<u64>, _> = value.split(',').map(|s| s.trim().parse::<u64>()).collect();
    seeds.map_err(|e| CliError::Usage(format!("invalid value for {key}: {e}")))
}

pub fn seeds_string(seeds: &[u64]) -> String {
    seeds
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
