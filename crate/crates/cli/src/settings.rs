//! Flag, config-file and default resolution for one subcommand.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

/// Keys accepted in a config file besides the subcommand's own flags.
const GLOBAL_KEYS: &[&str] = &["threads"];

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

/// Parses flat `key = value` text. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", n + 1))?;
        let key = normalize(k);
        if key.is_empty() {
            bail!("config line {}: empty key", n + 1);
        }
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            bail!("config line {}: duplicate key `{key}`", n + 1);
        }
    }
    Ok(map)
}

pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    /// Loads `path` (if any) and rejects keys that are not in `allowed`.
    pub fn load(path: Option<&Path>, allowed: &[String]) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        for key in file.keys() {
            if !allowed.iter().any(|a| a == key) && !GLOBAL_KEYS.contains(&key.as_str()) {
                bail!("unknown config key `{key}`");
            }
        }
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key `{key}`: {e}")))
            .transpose()
    }

    /// Flag, then config file, then `default`. The value enters the config hash.
    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        let shown = v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string);
        self.resolved.insert(key.to_string(), shown);
        Ok(v)
    }

    pub fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(key, flag)?.ok_or_else(|| anyhow!("missing required `--{key}`"))
    }

    /// Paths do not enter the config hash, so identical runs in different
    /// directories carry identical headers.
    pub fn path(&self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| self.file.get(key).map(PathBuf::from))
    }

    pub fn require_path(&self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.path(key, flag).ok_or_else(|| anyhow!("missing required `--{key}`"))
    }

    /// Comma-separated list of paths.
    pub fn paths(&self, key: &str, flag: Vec<PathBuf>) -> Vec<PathBuf> {
        if !flag.is_empty() {
            return flag;
        }
        self.file
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Drops a resolved key from the hash.
    pub fn forget(&mut self, key: &str) {
        self.resolved.remove(key);
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.resolved {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// `dmvfc <version> <command> config=<sha256> seeds=<k>:<v>,...`
    pub fn header(&self, command: &str) -> String {
        let seeds: Vec<String> = self
            .resolved
            .iter()
            .filter(|(k, _)| k.ends_with("seed"))
            .map(|(k, v)| format!("{k}:{v}"))
            .collect();
        format!(
            "dmvfc {} {command} config={} seeds={}",
            env!("CARGO_PKG_VERSION"),
            self.hash(),
            if seeds.is_empty() { "none".to_string() } else { seeds.join(",") }
        )
    }
}
