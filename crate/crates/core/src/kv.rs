//! `key=value` text files: one pair per line, `#` starts a comment.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KvFile {
    pub entries: Vec<KvEntry>,
}

#[derive(Clone, Debug)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

impl KvFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: no + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            entries.push(KvEntry {
                key: k.trim().to_string(),
                value: v.trim().to_string(),
                line: no + 1,
            });
        }
        Ok(KvFile { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KvFile::parse(&text, path)
    }
}

impl KvEntry {
    pub fn parse<T: FromStr>(&self, path: &Path) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.value.parse().map_err(|e: T::Err| Error::Parse {
            path: path.to_path_buf(),
            line: self.line,
            message: format!("{}: {e}", self.key),
        })
    }

    pub fn unknown(&self, path: &Path) -> Error {
        Error::Parse {
            path: path.to_path_buf(),
            line: self.line,
            message: format!("unknown key {:?}", self.key),
        }
    }
}
