//! Flat `key = value` run configuration with `#` comments.
//!
//! Values resolve in order: command-line flag, config file, environment
//! (seed only), built-in default. Every resolved value is recorded so it
//! can be echoed next to the outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aift_core::AiftError;

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "AIFT_SEED";
pub const ECHO_FILE: &str = "effective-config.txt";

pub fn parse_config(text: &str, origin: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("{origin}:{}: expected key = value, got {raw:?}", no + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::config(format!("{origin}:{}: empty key", no + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::config(format!("{origin}:{}: duplicate key {key}", no + 1)));
        }
    }
    Ok(out)
}

/// Resolved settings for one command.
#[derive(Debug)]
pub struct Settings {
    command: &'static str,
    file: BTreeMap<String, String>,
    effective: BTreeMap<String, String>,
}

impl Settings {
    /// Loads `config` (if any) and rejects keys outside `allowed`.
    pub fn load(command: &'static str, config: Option<&Path>, allowed: &[&str]) -> CliResult<Self> {
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| AiftError::input(path, e.to_string()))?;
                parse_config(&text, &path.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        if let Some(bad) = file.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CliError::config(format!(
                "unknown config key {bad:?} for {command} (allowed: {})",
                allowed.join(", ")
            )));
        }
        Ok(Settings { command, file, effective: BTreeMap::new() })
    }

    fn parse_file<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| CliError::config(format!("config key {key} = {v:?}: {e}"))))
            .transpose()
    }

    /// Flag, then file, then `default`.
    pub fn value<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.parse_file(key)?.unwrap_or(default),
        };
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Flag, then file; absent if neither is set.
    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.parse_file(key)?,
        };
        if let Some(v) = &v {
            self.effective.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    /// Like [`Settings::optional`] but failing with a configuration error.
    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::config(format!("{} needs --{key} (flag or config key)", self.command)))
    }

    /// Path from flag, then file.
    pub fn optional_path(&mut self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        let v = flag.or_else(|| self.file.get(key).map(PathBuf::from));
        if let Some(v) = &v {
            self.effective.insert(key.to_string(), v.display().to_string());
        }
        v
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> CliResult<PathBuf> {
        self.optional_path(key, flag)
            .ok_or_else(|| CliError::config(format!("{} needs --{key} (flag or config key)", self.command)))
    }

    /// Seed from flag, file, then the `AIFT_SEED` environment variable.
    pub fn seed(&mut self, flag: Option<u64>) -> CliResult<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|e| CliError::config(format!("{SEED_ENV}={v:?}: {e}")))?),
            Err(_) => None,
        };
        let from_file = self.parse_file::<u64>("seed")?;
        let seed = flag.or(from_file).or(env).unwrap_or(0);
        self.effective.insert("seed".into(), seed.to_string());
        Ok(seed)
    }

    /// Records a derived value that has no flag of its own.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.effective.insert(key.to_string(), value.to_string());
    }

    /// The effective configuration as a config file, headed by the tool version.
    pub fn echo(&self) -> String {
        let mut out = format!("# {} {} {}\n", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"), self.command);
        for (k, v) in &self.effective {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Comma-separated list parser for flags like `--seeds 1,2,3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_normalizes_keys() {
        let m = parse_config("# header\nepochs = 3 # trailing\n\ncritic_iters=2\n", "t").unwrap();
        assert_eq!(m.get("epochs").map(String::as_str), Some("3"));
        assert_eq!(m.get("critic-iters").map(String::as_str), Some("2"));
    }

    #[test]
    fn rejects_malformed_and_duplicate_lines() {
        assert!(parse_config("epochs 3", "t").is_err());
        assert!(parse_config("a = 1\na = 2", "t").is_err());
        assert!(parse_config("= 2", "t").is_err());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "epochs = 2\nlearning = 3\n").unwrap();
        let err = Settings::load("train", Some(&path), &["epochs"]).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::exit::CONFIG);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "epochs = 7\n").unwrap();
        let mut s = Settings::load("train", Some(&path), &["epochs", "batch"]).unwrap();
        assert_eq!(s.value("epochs", None, 50usize).unwrap(), 7);
        assert_eq!(s.value("batch", None, 64usize).unwrap(), 64);
        assert_eq!(s.value("epochs", Some(9usize), 50).unwrap(), 9);
        assert!(s.echo().contains("epochs = 9\n"));
        assert!(s.echo().starts_with("# aift-cli "));
    }

    #[test]
    fn echo_parses_back() {
        let mut s = Settings::load("synth", None, &[]).unwrap();
        s.value("normal", Some(5usize), 0).unwrap();
        s.note("patch-size", 32);
        let back = parse_config(&s.echo(), "echo").unwrap();
        assert_eq!(back.len(), 2);
    }

    #[test]
    fn lists_round_trip() {
        let l: List<u64> = "1, 2,3".parse().unwrap();
        assert_eq!(l, List(vec![1, 2, 3]));
        assert_eq!(l.to_string(), "1,2,3");
        assert!("1,x".parse::<List<u64>>().is_err());
    }
}
