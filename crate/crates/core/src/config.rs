//! Flat `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment, later lines override earlier
//! ones. Command-line flags are applied on top with [`ConfigMap::set`].
//!
//! ```text
//! # training
//! learning_rate = 0.01
//! neg_sampler = leaky
//! anneal.c_start = 1.0
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Keys understood by [`ConfigMap::train_config`].
pub const TRAIN_KEYS: &[&str] = &[
    "cd_steps",
    "learning_rate",
    "momentum",
    "batch_size",
    "epochs",
    "neg_sampler",
    "anneal.c_start",
    "anneal.epsilon",
    "anneal.sweeps_per_level",
    "weight_decay",
    "projection",
    "seed",
    "kernel",
    "lr_decay",
    "train_visible_bias",
];

/// Model and estimation keys used by the command-line tool.
pub const OTHER_KEYS: &[&str] = &[
    "hidden",
    "leakiness",
    "kind",
    "path",
    "levels",
    "particles",
    "path.sweeps_per_level",
    "chains",
    "steps",
    "sampler",
    "format",
    "repeats",
    "max_epochs",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    /// Value and the line it came from (0 for overrides).
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ConfigMap::default();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                detail: format!("expected `key = value`, found `{content}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config {
                    line,
                    detail: "empty key".into(),
                });
            }
            map.entries.insert(key.to_string(), (value.trim().to_string(), line));
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((value, line)) => value.parse().map(Some).map_err(|_| Error::Config {
                line: *line,
                detail: format!("invalid value `{value}` for `{key}`"),
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Fails on the first key outside `known`.
    pub fn check_known(&self, known: &[&[&str]]) -> Result<()> {
        for (key, (_, line)) in &self.entries {
            if !known.iter().any(|set| set.contains(&key.as_str())) {
                return Err(Error::Config {
                    line: *line,
                    detail: format!("unknown key `{key}`"),
                });
            }
        }
        Ok(())
    }

    /// Overlays every training key present onto `base`.
    pub fn train_config(&self, base: TrainConfig) -> Result<TrainConfig> {
        let mut c = base;
        c.cd_steps = self.get_or("cd_steps", c.cd_steps)?;
        c.learning_rate = self.get_or("learning_rate", c.learning_rate)?;
        c.momentum = self.get_or("momentum", c.momentum)?;
        c.batch_size = self.get_or("batch_size", c.batch_size)?;
        c.epochs = self.get_or("epochs", c.epochs)?;
        c.neg_sampler = self.get_or("neg_sampler", c.neg_sampler)?;
        c.anneal.c_start = self.get_or("anneal.c_start", c.anneal.c_start)?;
        if let Some(e) = self.get::<f64>("anneal.epsilon")? {
            c.anneal.epsilon = Some(e);
        }
        c.anneal.sweeps_per_level = self.get_or("anneal.sweeps_per_level", c.anneal.sweeps_per_level)?;
        c.weight_decay = self.get_or("weight_decay", c.weight_decay)?;
        c.projection_enabled = self.get_or("projection", c.projection_enabled)?;
        c.seed = self.get_or("seed", c.seed)?;
        c.kernel = self.get_or("kernel", c.kernel)?;
        c.lr_decay = self.get_or("lr_decay", c.lr_decay)?;
        c.train_visible_bias = self.get_or("train_visible_bias", c.train_visible_bias)?;
        c.validate()?;
        Ok(c)
    }

    /// `key=value` lines in key order.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, (v, _)) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    /// First eight bytes (little-endian) of the SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.canonical().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::NegativeSampler;

    #[test]
    fn parse_and_override() {
        let mut m = ConfigMap::parse("# comment\nlearning_rate = 0.5\n\nneg_sampler=mix # trailing\nepochs = 3\n").unwrap();
        m.set("epochs", 7);
        let c = m.train_config(TrainConfig::default()).unwrap();
        assert_eq!(c.learning_rate, 0.5);
        assert_eq!(c.neg_sampler, NegativeSampler::Mix);
        assert_eq!(c.epochs, 7);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ConfigMap::parse("a = 1\nnonsense\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let m = ConfigMap::parse("momentum = 1.5\n").unwrap();
        assert!(m.train_config(TrainConfig::default()).is_err());
        let m = ConfigMap::parse("\n\nepochs = many\n").unwrap();
        assert!(matches!(m.train_config(TrainConfig::default()), Err(Error::Config { line: 3, .. })));
        let m = ConfigMap::parse("learnin_rate = 0.1\n").unwrap();
        assert!(m.check_known(&[TRAIN_KEYS, OTHER_KEYS]).is_err());
    }

    #[test]
    fn hash_ignores_order_and_comments() {
        let a = ConfigMap::parse("x = 1\ny = 2\n").unwrap();
        let b = ConfigMap::parse("# c\ny = 2\nx = 1\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), ConfigMap::parse("x = 2\ny = 2\n").unwrap().hash());
    }
}
