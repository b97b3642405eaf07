//! Plain-text `key = value` files.
//!
//! One entry per line; blank lines and lines starting with `#` are
//! ignored. Keys must be unique. Consumers take the keys they understand and
//! call [`KvFile::finish`], which rejects anything left over.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::read_text;

#[derive(Clone, Debug)]
pub struct KvFile {
    path: PathBuf,
    entries: IndexMap<String, (String, usize)>,
}

impl KvFile {
    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = IndexMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let Some((k, v)) = l.split_once('=') else {
                return Err(Error::Config {
                    path,
                    line,
                    msg: format!("expected key = value, got `{l}`"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config {
                    path,
                    line,
                    msg: "empty key".into(),
                });
            }
            if let Some((_, first)) = entries.get(k) {
                return Err(Error::Config {
                    path,
                    line,
                    msg: format!("duplicate key `{k}` (first set on line {first})"),
                });
            }
            entries.insert(k.to_string(), (v.to_string(), line));
        }
        Ok(KvFile { path, entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_text(path)?, path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Remaining entries as `(key, value, line)`.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, usize)> {
        self.entries
            .iter()
            .map(|(k, (v, l))| (k.as_str(), v.as_str(), *l))
    }

    /// Remove `key` and parse its value.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.shift_remove(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e| Error::Config {
                path: self.path.clone(),
                line,
                msg: format!("bad value for `{key}`: {e}"),
            }),
        }
    }

    /// Like [`KvFile::take`], then validate with `check`.
    pub fn take_checked<T: FromStr>(
        &mut self,
        key: &str,
        check: impl FnOnce(&T) -> bool,
        what: &str,
    ) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let line = self.entries.get(key).map(|(_, l)| *l);
        let v = self.take::<T>(key)?;
        match (v, line) {
            (Some(v), Some(line)) if !check(&v) => Err(Error::Config {
                path: self.path.clone(),
                line,
                msg: format!("`{key}` must be {what}"),
            }),
            (v, _) => Ok(v),
        }
    }

    /// Error on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        if let Some((k, (_, line))) = self.entries.into_iter().next() {
            return Err(Error::Config {
                path: self.path,
                line,
                msg: format!("unknown key `{k}`"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_lines() {
        let mut kv = KvFile::parse("# c\n\na = 1\n b=two \n", "cfg").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(1));
        assert_eq!(kv.take::<u32>("missing").unwrap(), None);
        let err = kv.clone().take::<u32>("b").unwrap_err();
        assert!(matches!(err, Error::Config { line: 4, .. }), "{err}");
        let err = kv.finish().unwrap_err();
        assert!(err.to_string().contains("cfg:4: unknown key `b`"), "{err}");
    }

    #[test]
    fn syntax_errors() {
        let err = KvFile::parse("a=1\nnonsense\n", "c").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let err = KvFile::parse("a=1\na=2\n", "c").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        assert!(KvFile::parse("=3", "c").is_err());
    }

    #[test]
    fn checked_values() {
        let mut kv = KvFile::parse("n = 0\n", "c").unwrap();
        let err = kv
            .take_checked::<usize>("n", |&v| v > 0, "positive")
            .unwrap_err();
        assert!(err.to_string().contains("c:1"));
    }
}
