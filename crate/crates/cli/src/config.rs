//! Plain-text `key=value` run configuration with flag overrides.
//!
//! A config file seeds defaults; explicit command-line flags win. Every
//! command prints the resolved set before running so runs are reproducible
//! from their logs. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use crackseg::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, known_keys: &[&str]) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap().trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1))
                })?;
                let key = key.trim().to_string();
                if !known_keys.contains(&key.as_str()) {
                    return Err(Error::Config(format!(
                        "{}:{}: unknown key '{key}'",
                        path.display(),
                        lineno + 1
                    )));
                }
                values.insert(key, value.trim().to_string());
            }
        }
        Ok(Self { values, resolved: BTreeMap::new() })
    }

    /// Flag value if given, else config file value, else default.
    pub fn resolve<T: Clone + std::fmt::Display + std::str::FromStr>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T> {
        let value = match (flag, self.values.get(key)) {
            (Some(v), _) => v,
            (None, Some(raw)) => raw
                .parse::<T>()
                .map_err(|_| Error::Config(format!("config key '{key}': bad value '{raw}'")))?,
            (None, None) => default,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Like `resolve` but without a default; `None` when absent everywhere.
    pub fn resolve_opt<T: Clone + std::fmt::Display + std::str::FromStr>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>> {
        let value = match (flag, self.values.get(key)) {
            (Some(v), _) => Some(v),
            (None, Some(raw)) => Some(raw.parse::<T>().map_err(|_| {
                Error::Config(format!("config key '{key}': bad value '{raw}'"))
            })?),
            (None, None) => None,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    /// Required value: flag or config must provide it.
    pub fn require<T: Clone + std::fmt::Display + std::str::FromStr>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<T> {
        self.resolve_opt(key, flag)?
            .ok_or_else(|| Error::Config(format!("missing required option '--{key}'")))
    }

    pub fn print_resolved(&self, command: &str) {
        println!("# resolved configuration ({command})");
        for (key, value) in &self.resolved {
            println!("{key}={value}");
        }
    }
}
