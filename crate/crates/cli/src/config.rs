//! Strict `key = value` configuration.
//!
//! One pair per line, `#` starts a comment line, whitespace around keys
//! and values is ignored. Each subcommand declares which keys may repeat;
//! every other key may appear once, and any key left unread is an error.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, Vec<(usize, String)>>,
}

impl Config {
    /// Parses config text. `origin` names the source in diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::invalid(format!("{origin}:{}: expected key=value", i + 1))
            })?;
            cfg.push(k.trim(), v.trim(), i + 1, origin)?;
        }
        Ok(cfg)
    }

    fn push(&mut self, key: &str, value: &str, line: usize, origin: &str) -> Result<(), CliError> {
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(CliError::invalid(format!("{origin}:{line}: bad key `{key}`")));
        }
        self.entries
            .entry(key.to_string())
            .or_default()
            .push((line, value.to_string()));
        Ok(())
    }

    /// Applies `key=value` overrides given on the command line. An
    /// override replaces every value the file gave for that key.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), CliError> {
        let mut seen = BTreeMap::new();
        for (i, s) in sets.iter().enumerate() {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::invalid(format!("--set `{s}`: expected key=value")))?;
            let k = k.trim();
            if seen.insert(k.to_string(), ()).is_none() {
                self.entries.remove(k);
            }
            self.push(k, v.trim(), i + 1, "--set")?;
        }
        Ok(())
    }

    fn single(&mut self, key: &str) -> Result<Option<String>, CliError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(mut v) if v.len() == 1 => Ok(v.pop().map(|(_, s)| s)),
            Some(v) => Err(CliError::invalid(format!(
                "key `{key}` given {} times (lines {})",
                v.len(),
                v.iter().map(|(l, _)| l.to_string()).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        match self.single(key)? {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| CliError::invalid(format!("key `{key}`: cannot parse `{s}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn string(&mut self, key: &str) -> Result<Option<String>, CliError> {
        self.single(key)
    }

    /// All values of a repeatable key, in file order.
    pub fn all(&mut self, key: &str) -> Vec<String> {
        self.entries
            .remove(key)
            .unwrap_or_default()
            .into_iter()
            .map(|(_, s)| s)
            .collect()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Fails on any key no accessor consumed.
    pub fn finish(self) -> Result<(), CliError> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        Err(CliError::invalid(format!("unknown config key(s): {}", keys.join(", "))))
    }
}

/// `true`/`false` only; anything else is rejected.
pub fn parse_bool(key: &str, s: &str) -> Result<bool, CliError> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::invalid(format!("key `{key}`: expected true or false, got `{s}`"))),
    }
}

impl Config {
    pub fn flag(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.single(key)? {
            None => Ok(default),
            Some(s) => parse_bool(key, &s),
        }
    }
}
