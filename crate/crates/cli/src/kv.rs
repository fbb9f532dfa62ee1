//! `key = value` text files. `#` starts a comment line; keys are unique.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::manifest_lines;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    origin: PathBuf,
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut kv = Self {
            origin: path.to_path_buf(),
            entries: BTreeMap::new(),
        };
        for (line, text) in manifest_lines(path)? {
            let (k, v) = split_pair(&text).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected key=value, got `{text}`"),
            })?;
            if kv.entries.insert(k.clone(), v).is_some() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("duplicate key `{k}`"),
                });
            }
        }
        Ok(kv)
    }

    /// Sets `key`, replacing any earlier value.
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Applies a `key=value` override string.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = split_pair(pair)
            .ok_or_else(|| Error::Spec(format!("override `{pair}` is not key=value")))?;
        self.entries.insert(k, v);
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Removes and parses `key`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                Error::Spec(format!(
                    "{}: key `{key}` = `{raw}`: {e}",
                    self.origin.display()
                ))
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.take(key)?
            .ok_or_else(|| Error::Spec(format!("{}: missing key `{key}`", self.origin.display())))
    }

    /// Fails if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        Err(Error::Spec(format!(
            "{}: unknown keys: {}",
            self.origin.display(),
            keys.join(", ")
        )))
    }

    /// Renders the entries sorted by key, one per line.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn origin(&self) -> &Path {
        &self.origin
    }

    pub(crate) fn with_origin(origin: impl Into<PathBuf>) -> Self {
        Self {
            origin: origin.into(),
            entries: BTreeMap::new(),
        }
    }
}

fn split_pair(text: &str) -> Option<(String, String)> {
    let (k, v) = text.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}
