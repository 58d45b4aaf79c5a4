//! Flat `key = value` text files with `#` comments.
//!
//! Every lookup records the key as consumed; [`KvDoc::finish`] rejects the
//! rest, so typos surface as errors with their line number.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

#[derive(Debug)]
pub struct KvDoc {
    origin: String,
    entries: BTreeMap<String, Entry>,
}

impl KvDoc {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |detail: String| Error::Config {
                origin: origin.to_string(),
                line,
                detail,
            };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{content}`")))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(err("empty key".into()));
            }
            if let Some(prev) = entries.get(key).map(|e: &Entry| e.line) {
                return Err(err(format!("duplicate key `{key}` (first set on line {prev})")));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line,
                    used: false,
                },
            );
        }
        Ok(Self {
            origin: origin.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    /// Line of `key`, or 0 when absent.
    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    /// Error attributed to the line holding `key`.
    pub fn error_at(&self, key: &str, detail: impl Into<String>) -> Error {
        Error::Config {
            origin: self.origin.clone(),
            line: self.line_of(key),
            detail: detail.into(),
        }
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            e.value.clone()
        })
    }

    /// Parses `key` as `T`; `expected` names the type in the error message.
    pub fn get<T: FromStr>(&mut self, key: &str, expected: &str) -> Result<Option<T>> {
        let Some(raw) = self.raw(key) else {
            return Ok(None);
        };
        raw.parse::<T>()
            .map(Some)
            .map_err(|_| self.error_at(key, format!("`{key}` expects {expected}, got `{raw}`")))
    }

    pub fn get_or<T: FromStr>(&mut self, key: &str, expected: &str, default: T) -> Result<T> {
        Ok(self.get(key, expected)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str, expected: &str) -> Result<T> {
        self.get(key, expected)?.ok_or_else(|| Error::Config {
            origin: self.origin.clone(),
            line: 0,
            detail: format!("missing required key `{key}` ({expected})"),
        })
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        let Some(raw) = self.raw(key) else {
            return Ok(default);
        };
        match raw.as_str() {
            "true" | "yes" | "on" | "1" => Ok(true),
            "false" | "no" | "off" | "0" => Ok(false),
            _ => Err(self.error_at(key, format!("`{key}` expects a boolean, got `{raw}`"))),
        }
    }

    /// Rejects any key that was never looked up.
    pub fn finish(self) -> Result<()> {
        let unknown = self
            .entries
            .iter()
            .filter(|(_, e)| !e.used)
            .min_by_key(|(_, e)| e.line);
        match unknown {
            Some((key, e)) => Err(Error::Config {
                origin: self.origin,
                line: e.line,
                detail: format!("unknown key `{key}`"),
            }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_types() {
        let mut d = KvDoc::parse("# header\na = 3  # trailing\n\nb=0.5\nflag = yes\n", "t").unwrap();
        assert_eq!(d.get::<usize>("a", "an integer").unwrap(), Some(3));
        assert_eq!(d.get_or::<f64>("b", "a number", 1.0).unwrap(), 0.5);
        assert_eq!(d.get_or::<f64>("c", "a number", 1.0).unwrap(), 1.0);
        assert!(d.bool_or("flag", false).unwrap());
        d.finish().unwrap();
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = KvDoc::parse("a = 1\nnot a pair\n", "cfg").unwrap_err();
        assert_eq!(e.to_string(), "cfg:2: expected `key = value`, found `not a pair`");

        let mut d = KvDoc::parse("a = 1\n\nsede = 4\n", "cfg").unwrap();
        d.get::<usize>("a", "an integer").unwrap();
        let e = d.finish().unwrap_err();
        assert_eq!(e.to_string(), "cfg:3: unknown key `sede`");

        let mut d = KvDoc::parse("\nx = abc\n", "cfg").unwrap();
        let e = d.get::<f64>("x", "a number").unwrap_err();
        assert_eq!(e.to_string(), "cfg:2: `x` expects a number, got `abc`");

        assert!(KvDoc::parse("a = 1\na = 2\n", "cfg").is_err());
    }
}
