//! Flat key-value runtime configuration.
//!
//! The format is `key = value` lines with `#` comments. A `[section]` header
//! prefixes the following keys with `section.`, so `[mesh]` + `file = x`
//! means `mesh.file = x`. Every key must be consumed by the reader; leftovers
//! are reported as errors so typos never silently fall back to defaults.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Config {
    /// insertion-ordered (key, value, source line)
    entries: Vec<(String, String, usize)>,
    index: HashMap<String, usize>,
    used: HashSet<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let s = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if s.is_empty() {
                continue;
            }
            if let Some(name) = s.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config { line, msg: "unterminated section header".into() })?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Config { line, msg: "empty section name".into() });
                }
                section = name.to_string();
                continue;
            }
            let eq = s.find('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected key = value, got {s:?}"),
            })?;
            let key = s[..eq].trim();
            let value = s[eq + 1..].trim();
            if key.is_empty() {
                return Err(Error::Config { line, msg: "empty key".into() });
            }
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            if let Some(&prev) = index.get(&full) {
                let prev_entry: &mut (String, String, usize) = &mut entries[prev];
                prev_entry.1 = value.to_string();
                prev_entry.2 = line;
            } else {
                index.insert(full.clone(), entries.len());
                entries.push((full, value.to_string(), line));
            }
        }
        Ok(Config { entries, index, used: HashSet::new() })
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text)
    }

    pub fn empty() -> Config {
        Config { entries: Vec::new(), index: HashMap::new(), used: HashSet::new() }
    }

    /// Inserts or overrides one key programmatically (command line overrides).
    pub fn set(&mut self, key: &str, value: impl ToString) {
        match self.index.get(key) {
            Some(&i) => self.entries[i].1 = value.to_string(),
            None => {
                self.index.insert(key.to_string(), self.entries.len());
                self.entries.push((key.to_string(), value.to_string(), 0));
            }
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    fn raw(&mut self, key: &str) -> Option<(&str, usize)> {
        match self.index.get(key) {
            Some(&i) => {
                self.used.insert(key.to_string());
                let e = &self.entries[i];
                Some((e.1.as_str(), e.2))
            }
            None => None,
        }
    }

    pub fn get_str(&mut self, key: &str) -> Option<String> {
        self.raw(key).map(|(v, _)| v.to_string())
    }

    pub fn str_or(&mut self, key: &str, default: &str) -> String {
        self.get_str(key).unwrap_or_else(|| default.to_string())
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| Error::Config {
                line,
                msg: format!("{key}: expected a number, got {v:?}"),
            }),
        }
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| Error::Config {
                line,
                msg: format!("{key}: expected a non-negative integer, got {v:?}"),
            }),
        }
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| Error::Config {
                line,
                msg: format!("{key}: expected an integer, got {v:?}"),
            }),
        }
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => match v {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                _ => Err(Error::Config { line, msg: format!("{key}: expected a boolean, got {v:?}") }),
            },
        }
    }

    /// Requires a key to be present.
    pub fn require_str(&mut self, key: &str) -> Result<String> {
        self.get_str(key).ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    /// Fails if any key was never read, naming the first offender.
    pub fn finish(self) -> Result<()> {
        for (k, _, _) in &self.entries {
            if !self.used.contains(k) {
                return Err(Error::UnknownKey(k.clone()));
            }
        }
        Ok(())
    }

    /// Serializes back to the flat form, one `key = value` per line in the
    /// original order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v, _) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let mut c = Config::parse(
            "timestep = 0.5  # half\n[mesh]\nfile = m.mesh\nlevels = 3\n[solver]\ntol = 1e-8\n",
        )
        .unwrap();
        assert_eq!(c.f64_or("timestep", 0.0).unwrap(), 0.5);
        assert_eq!(c.require_str("mesh.file").unwrap(), "m.mesh");
        assert_eq!(c.usize_or("mesh.levels", 0).unwrap(), 3);
        assert_eq!(c.f64_or("solver.tol", 0.0).unwrap(), 1e-8);
        c.finish().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = Config::parse("a = 1\nmistyped = 2\n").unwrap();
        assert_eq!(c.f64_or("a", 0.0).unwrap(), 1.0);
        let err = c.finish().unwrap_err();
        assert!(matches!(err, Error::UnknownKey(k) if k == "mistyped"));
    }

    #[test]
    fn later_assignment_wins() {
        let mut c = Config::parse("a = 1\na = 2\n").unwrap();
        assert_eq!(c.f64_or("a", 0.0).unwrap(), 2.0);
        c.finish().unwrap();
    }

    #[test]
    fn round_trips_through_text() {
        let src = "a = 1\n[s]\nb = two\nc = 3.5\n";
        let c = Config::parse(src).unwrap();
        let text = c.to_text();
        let c2 = Config::parse(&text).unwrap();
        let keys1: Vec<_> = c.keys().collect();
        let keys2: Vec<_> = c2.keys().collect();
        assert_eq!(keys1, keys2);
        assert_eq!(text, Config::parse(&text).unwrap().to_text());
    }

    #[test]
    fn error_messages_carry_line_numbers() {
        let err = Config::parse("ok = 1\nbroken\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let mut c = Config::parse("x = notanumber\n").unwrap();
        let err = c.f64_or("x", 0.0).unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
    }

    #[test]
    fn set_overrides_file_values() {
        let mut c = Config::parse("seed = 7\n").unwrap();
        c.set("seed", 99u64);
        assert_eq!(c.u64_or("seed", 0).unwrap(), 99);
        c.finish().unwrap();
    }
}
