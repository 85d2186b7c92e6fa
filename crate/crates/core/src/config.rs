//! Training hyperparameters and the `key = value` config file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Level;
use crate::error::{Error, Result};
use crate::params::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub word_dim: usize,
    pub tag_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: Mode,
    pub level: Level,
    pub regularize_embeddings: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            word_dim: 50,
            tag_dim: 50,
            hidden_dim: 250,
            learning_rate: 0.01,
            l2: 0.0001,
            batch_size: 10,
            epochs: 20,
            seed: 0,
            mode: Mode::TagTreeLstm,
            level: Level::One,
            regularize_embeddings: false,
        }
    }
}

pub const KEYS: [&str; 11] = [
    "word_dim",
    "tag_dim",
    "hidden_dim",
    "learning_rate",
    "l2",
    "batch_size",
    "epochs",
    "seed",
    "mode",
    "level",
    "regularize_embeddings",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{key}: cannot parse {value:?}: {e}")))
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (name, v) in [
            ("word_dim", self.word_dim),
            ("tag_dim", self.tag_dim),
            ("hidden_dim", self.hidden_dim),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "word_dim" => self.word_dim = parse(key, value)?,
            "tag_dim" => self.tag_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "l2" => self.l2 = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "level" => self.level = Level::try_from(parse::<u8>(key, value)?)?,
            "regularize_embeddings" => self.regularize_embeddings = parse(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped. Returns the keys that were set.
    pub fn apply_text(&mut self, text: &str) -> Result<Vec<String>> {
        let mut seen = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected key = value", no + 1))
            })?;
            let (k, v) = (k.trim(), v.trim().trim_matches('"'));
            if seen.iter().any(|s| s == k) {
                return Err(Error::InvalidArgument(format!(
                    "config line {}: duplicate key {k:?}",
                    no + 1
                )));
            }
            self.set(k, v)
                .map_err(|e| Error::InvalidArgument(format!("config line {}: {e}", no + 1)))?;
            seen.push(k.to_string());
        }
        Ok(seen)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = TrainingConfig::default();
        let keys = cfg.apply_text(&text)?;
        Ok((cfg, keys))
    }

    /// Renders the config in the file format; `apply_text` reads it back.
    pub fn to_text(&self) -> String {
        format!(
            "word_dim = {}\ntag_dim = {}\nhidden_dim = {}\nlearning_rate = {:?}\nl2 = {:?}\n\
             batch_size = {}\nepochs = {}\nseed = {}\nmode = {}\nlevel = {}\nregularize_embeddings = {}\n",
            self.word_dim,
            self.tag_dim,
            self.hidden_dim,
            self.learning_rate,
            self.l2,
            self.batch_size,
            self.epochs,
            self.seed,
            self.mode,
            u8::from(self.level),
            self.regularize_embeddings
        )
    }
}
