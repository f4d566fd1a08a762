//! Line-oriented `key = value` text files (schema maps, sidecars, manifests).

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Ordered key/value pairs. Blank lines and lines starting with `#` are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    pub entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", idx + 1))
            })?;
            entries.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_last_wins() {
        let kv = KvFile::parse("# c\na = 1\n\nb=two words \na = 3\n").unwrap();
        assert_eq!(kv.get("a"), Some("3"));
        assert_eq!(kv.get("b"), Some("two words"));
        assert!(KvFile::parse("novalue").is_err());
    }
}
