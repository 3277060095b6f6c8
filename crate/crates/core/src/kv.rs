//! Flat `key:value` / `key=value` text files used for transforms, reports
//! and configuration.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses one entry per line. Blank lines and `#` comments are skipped;
    /// duplicate keys are rejected.
    pub fn parse(text: &str, separator: char) -> Result<Self> {
        let mut kv = KeyValues::new();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(separator)
                .ok_or_else(|| Error::parse(i + 1, format!("expected `key{separator}value`")))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::parse(i + 1, "empty key"));
            }
            if !seen.insert(k.to_string()) {
                return Err(Error::parse(i + 1, format!("duplicate key `{k}`")));
            }
            kv.entries.push((k.to_string(), v.trim().to_string(), i + 1));
        }
        Ok(kv)
    }

    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string(), 0));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map_or(0, |(_, _, l)| *l)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Invalid(format!("missing key `{key}`")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e| Error::parse(self.line_of(key), format!("`{key}`: {e}")))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.parse_value(key).map(Some),
        }
    }

    /// Rejects any key not listed in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (k, _, line) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::parse(*line, format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self, separator: char) -> String {
        let mut out = String::new();
        for (k, v, _) in &self.entries {
            out.push_str(k);
            out.push(separator);
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}
