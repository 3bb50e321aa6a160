//! Flat `key = value` text files with `#` comments.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn parse(text: &str, origin: &Path) -> Result<KvFile> {
        let mut kv = KvFile::default();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let body = line.split('#').next().unwrap_or("").trim();
            if !body.is_empty() {
                let Some((k, v)) = body.split_once('=') else {
                    return Err(Error::Format {
                        path: origin.to_path_buf(),
                        offset,
                        reason: format!("expected `key = value`, found {body:?}"),
                    });
                };
                kv.set(k.trim(), v.trim());
            }
            offset += line.len() as u64;
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<KvFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KvFile::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.retain(|(k, _)| k != key);
    }

    /// Entries whose key starts with `prefix`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KvFile {
        KvFile {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Copy every entry of `other` under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &KvFile) {
        for (k, v) in &other.entries {
            self.set(&format!("{prefix}{k}"), v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Parse `key` into `T` if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::config(key, format!("cannot parse {v:?}"))),
        }
    }

    /// Overwrite `slot` when `key` is present.
    pub fn apply<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.parsed(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn apply_bool(&self, key: &str, slot: &mut bool) -> Result<()> {
        if let Some(v) = self.get(key) {
            *slot = parse_bool(v).ok_or_else(|| Error::config(key, format!("not a boolean: {v:?}")))?;
        }
        Ok(())
    }

    pub fn apply_pair<T: FromStr + Copy>(&self, key: &str, slot: &mut (T, T)) -> Result<()> {
        if let Some(v) = self.get(key) {
            let items = parse_list::<T>(v).ok_or_else(|| Error::config(key, format!("cannot parse {v:?}")))?;
            if items.len() != 2 {
                return Err(Error::config(key, format!("expected two values, got {}", items.len())));
            }
            *slot = (items[0], items[1]);
        }
        Ok(())
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => parse_list(v)
                .map(Some)
                .ok_or_else(|| Error::config(key, format!("cannot parse list {v:?}"))),
        }
    }
}

pub fn parse_bool(v: &str) -> Option<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

pub fn parse_list<T: FromStr>(v: &str) -> Option<Vec<T>> {
    let v = v.trim().trim_start_matches('[').trim_end_matches(']');
    if v.trim().is_empty() {
        return Some(Vec::new());
    }
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}
