//! Flat `key = value` settings: built-in defaults, then a config file, then flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::CliError;

pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    /// Keys that cannot change numerical output stay out of the config hash.
    pub hashed: bool,
}

pub const fn key(key: &'static str, default: &'static str) -> KeySpec {
    KeySpec {
        key,
        default,
        hashed: true,
    }
}

pub const fn unhashed(key: &'static str, default: &'static str) -> KeySpec {
    KeySpec {
        key,
        default,
        hashed: false,
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    /// Where the value came from, for error messages.
    origin: String,
}

#[derive(Debug, Clone)]
pub struct Settings {
    command: &'static str,
    entries: BTreeMap<&'static str, Entry>,
    hashed: Vec<&'static str>,
}

impl Settings {
    pub fn new(command: &'static str, specs: &[KeySpec]) -> Self {
        let entries = specs
            .iter()
            .map(|s| {
                (
                    s.key,
                    Entry {
                        value: s.default.to_string(),
                        origin: "default".into(),
                    },
                )
            })
            .collect();
        let hashed = specs.iter().filter(|s| s.hashed).map(|s| s.key).collect();
        Self {
            command,
            entries,
            hashed,
        }
    }

    fn known(&self, key: &str) -> Option<&'static str> {
        self.entries.keys().find(|k| **k == key).copied()
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let at = format!("{}:{}", path.display(), i + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{at}: expected 'key = value', got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            let known = self.known(k).ok_or_else(|| {
                CliError::Usage(format!(
                    "{at}: unknown key '{k}' for {} (known: {})",
                    self.command,
                    self.entries.keys().copied().collect::<Vec<_>>().join(", ")
                ))
            })?;
            if let Some(first) = seen.insert(known, i + 1) {
                return Err(CliError::Usage(format!("{at}: key '{k}' already set on line {first}")));
            }
            self.entries.insert(
                known,
                Entry {
                    value: v.to_string(),
                    origin: at,
                },
            );
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), CliError> {
        let known = self
            .known(key)
            .ok_or_else(|| CliError::Usage(format!("{origin}: unknown key '{key}' for {}", self.command)))?;
        self.entries.insert(
            known,
            Entry {
                value: value.trim().to_string(),
                origin: origin.to_string(),
            },
        );
        Ok(())
    }

    fn entry(&self, key: &str) -> &Entry {
        self.entries
            .get(key)
            .unwrap_or_else(|| panic!("setting '{key}' is not registered for {}", self.command))
    }

    pub fn str(&self, key: &str) -> &str {
        &self.entry(key).value
    }

    fn invalid(&self, key: &str, what: impl Display) -> CliError {
        let e = self.entry(key);
        CliError::Usage(format!("{}: invalid value '{}' for '{key}': {what}", e.origin, e.value))
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V, CliError>
    where
        V::Err: Display,
    {
        self.str(key).parse().map_err(|e| self.invalid(key, e))
    }

    pub fn list<V: FromStr>(&self, key: &str) -> Result<Vec<V>, CliError>
    where
        V::Err: Display,
    {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| self.invalid(key, e)))
            .collect()
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.str(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(self.invalid(key, "expected true or false")),
        }
    }

    /// `"WxH"` grid sizes.
    pub fn size(&self, key: &str) -> Result<(usize, usize), CliError> {
        let bad = || self.invalid(key, "expected WIDTHxHEIGHT");
        let (w, h) = self.str(key).split_once('x').ok_or_else(bad)?;
        let w: usize = w.trim().parse().map_err(|_| bad())?;
        let h: usize = h.trim().parse().map_err(|_| bad())?;
        if w == 0 || h == 0 {
            return Err(bad());
        }
        Ok((w, h))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.str(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// SHA-256 over the command and the sorted hashed settings.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("command={}\n", self.command));
        for (k, e) in &self.entries {
            if self.hashed.contains(k) {
                h.update(format!("{k}={}\n", e.value));
            }
        }
        hex::encode(h.finalize())
    }

    /// The fully resolved configuration, one `key = value` per line.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, e)| format!("{k} = {}\n", e.value))
            .collect()
    }

    pub fn command(&self) -> &'static str {
        self.command
    }
}
