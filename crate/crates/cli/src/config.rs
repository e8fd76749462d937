//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored, as is anything after
//! ` #` on a value line. Later assignments win, so command-line overrides are
//! applied on top of the file with [`RunConfig::set`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let line = line.split_once(" #").map_or(line, |(v, _)| v.trim_end());
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`, got `{raw}`", n + 1))?;
            let key = key.trim();
            if key.is_empty() {
                bail!("config line {}: empty key", n + 1);
            }
            cfg.set(key, value.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.values.insert(key.into(), value.into());
    }

    /// Applies a `KEY=VALUE` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{pair}` is not KEY=VALUE"))?;
        if k.trim().is_empty() {
            bail!("override `{pair}` has an empty key");
        }
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key `{key}` = `{v}`: {e}")))
            .transpose()
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| anyhow!("missing required config key `{key}`"))
    }

    /// Reads `key`, recording `default` in the config when it is absent so the
    /// manifest captures every value the run used.
    pub fn value_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: Display,
    {
        match self.get(key)? {
            Some(v) => Ok(v),
            None => {
                self.set(key, default.to_string());
                Ok(default)
            }
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require(key)
    }

    /// Rejects keys the command does not read, so a typo fails before any
    /// work is done. `seed` and `out` are always allowed.
    pub fn check_keys(&self, allowed: &[&str], prefixes: &[&str]) -> Result<()> {
        let allowed: BTreeSet<&str> = allowed.iter().copied().chain(["seed", "out"]).collect();
        let unknown: Vec<&str> = self
            .values
            .keys()
            .map(String::as_str)
            .filter(|k| !allowed.contains(k) && !prefixes.iter().any(|p| k.starts_with(p)))
            .collect();
        if !unknown.is_empty() {
            bail!("unknown config key(s) for this command: {}", unknown.join(", "));
        }
        Ok(())
    }

    /// `(suffix, value)` for every key starting with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.values
            .iter()
            .filter_map(move |(k, v)| k.strip_prefix(prefix).map(|s| (s, v.as_str())))
    }

    /// Sorted `key = value` lines.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the rendered config without `out`, so the same run written
    /// to another directory hashes identically.
    pub fn hash(&self) -> String {
        let mut without_out = self.clone();
        without_out.values.remove("out");
        hex::encode(Sha256::digest(without_out.render().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_overrides() {
        let mut cfg = RunConfig::parse("# header\nk = 1 # trailing\n\nm=0.5\nk = 3\n").unwrap();
        assert_eq!(cfg.require::<usize>("k").unwrap(), 3);
        cfg.set_pair("m=0.7").unwrap();
        assert_eq!(cfg.require::<f64>("m").unwrap(), 0.7);
        assert!(RunConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn defaults_are_recorded() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.value_or("top_k", 50usize).unwrap(), 50);
        assert_eq!(cfg.render(), "top_k = 50\n");
    }

    #[test]
    fn hash_ignores_out() {
        let mut a = RunConfig::parse("seed = 1\nout = a\n").unwrap();
        let b = RunConfig::parse("seed = 1\nout = b\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        a.set("seed", "2");
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let cfg = RunConfig::parse("top_k = 5\nblindtan.epochs = 2\ntopk = 1\n").unwrap();
        assert!(cfg.check_keys(&["top_k"], &["blindtan."]).is_err());
        let cfg = RunConfig::parse("top_k = 5\nblindtan.epochs = 2\n").unwrap();
        cfg.check_keys(&["top_k"], &["blindtan."]).unwrap();
    }
}
