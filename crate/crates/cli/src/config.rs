//! Flat `key = value` configuration with `#` comments.
//!
//! Each subcommand declares its keys with defaults. Values are layered:
//! defaults, then the config file, then command-line flags.

use std::path::Path;

use steer_core::report::Metadata;

use crate::CliError;

#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        name,
        default,
        help,
    }
}

#[derive(Clone, Debug)]
pub struct Settings {
    specs: &'static [KeySpec],
    values: Vec<String>,
}

/// Closest known key, if any is reasonably similar.
pub fn suggest<'a>(unknown: &str, known: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    known
        .map(|k| (strsim::normalized_damerau_levenshtein(unknown, k), k))
        .filter(|(score, _)| *score >= 0.6)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

impl Settings {
    pub fn new(specs: &'static [KeySpec]) -> Self {
        Self {
            specs,
            values: specs.iter().map(|s| s.default.to_string()).collect(),
        }
    }

    pub fn specs(&self) -> &'static [KeySpec] {
        self.specs
    }

    fn index(&self, key: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == key)
    }

    fn unknown(&self, key: &str, origin: &str) -> CliError {
        let hint = suggest(key, self.specs.iter().map(|s| s.name))
            .map(|k| format!(" (did you mean `{k}`?)"))
            .unwrap_or_default();
        CliError::Config(format!("{origin}unknown key `{key}`{hint}"))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let i = self.index(key).ok_or_else(|| self.unknown(key, ""))?;
        self.values[i] = value.trim().to_string();
        Ok(())
    }

    /// Applies `key = value` lines; `origin` prefixes error messages.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{origin}:{}: ", n + 1);
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{at}expected `key = value`, found `{line}`"))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(CliError::Config(format!("{at}missing key before `=`")));
            }
            let i = self.index(k).ok_or_else(|| self.unknown(k, &at))?;
            self.values[i] = v.trim().to_string();
        }
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> &str {
        let i = self
            .index(key)
            .unwrap_or_else(|| panic!("key `{key}` is not declared"));
        &self.values[i]
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T, CliError> {
        let v = self.get_str(key);
        v.parse()
            .map_err(|_| CliError::Config(format!("key `{key}`: expected {what}, got `{v}`")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, CliError> {
        self.parse(key, "a number")
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, CliError> {
        self.parse(key, "a non-negative integer")
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, CliError> {
        self.parse(key, "a non-negative integer")
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, CliError> {
        match self.get_str(key) {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            v => Err(CliError::Config(format!(
                "key `{key}`: expected true or false, got `{v}`"
            ))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Vec<T>, CliError> {
        let v = self.get_str(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|p| {
                p.trim().parse().map_err(|_| {
                    CliError::Config(format!("key `{key}`: expected a list of {what}, got `{v}`"))
                })
            })
            .collect()
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.list(key, "numbers")
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Vec<usize>, CliError> {
        self.list(key, "integers")
    }

    pub fn get_u64_list(&self, key: &str) -> Result<Vec<u64>, CliError> {
        self.list(key, "integers")
    }

    /// Every effective value in declaration order.
    pub fn metadata(&self) -> Metadata {
        let mut m = Metadata::new();
        for (s, v) in self.specs.iter().zip(&self.values) {
            m.push(s.name, v);
        }
        m
    }
}

/// Reads `path` on top of the defaults of `specs`.
pub fn load_config(path: &Path, specs: &'static [KeySpec]) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(format!("cannot read config file {}: {e}", path.display()))
    })?;
    let mut s = Settings::new(specs);
    s.apply_text(&text, &path.display().to_string())?;
    Ok(s)
}
