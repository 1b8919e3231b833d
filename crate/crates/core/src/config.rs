//! Flat `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key maps onto a
//! field of [`TrainConfig`] (including the model dimensions) or [`GenConfig`].

use crate::controller::ActionSpace;
use crate::corpus::{GenConfig, IntRange};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "supervised_epochs" => self.supervised_epochs = num(key, value)?,
            "rl_epochs" => self.rl_epochs = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "teacher_target" => self.teacher_target = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "metrics_docs" => self.metrics_docs = num(key, value)?,
            "vocab_size" => self.model.vocab_size = num(key, value)?,
            "embed_dim" => self.model.embed_dim = num(key, value)?,
            "word_hidden" => self.model.word_hidden = num(key, value)?,
            "sentence_hidden" => self.model.sentence_hidden = num(key, value)?,
            "controller_hidden" => self.model.controller_hidden = num(key, value)?,
            "head_hidden" => self.model.head_hidden = num(key, value)?,
            "action_space" => self.model.action_space = value.parse::<ActionSpace>()?,
            _ => return Err(Error::Config(format!("unknown training key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl GenConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let range = || value.parse::<IntRange>();
        match key {
            "docs" => self.docs = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "paragraphs" => self.paragraphs = range()?,
            "sentences_per_paragraph" => self.sentences_per_paragraph = range()?,
            "words_per_sentence" => self.words_per_sentence = range()?,
            "words_per_doc" => self.words_per_doc = range()?,
            "events" => self.events = range()?,
            "trigger_pool" => self.trigger_pool = range()?,
            "filler_pool" => self.filler_pool = range()?,
            "shape_weights" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| num(key, p.trim()))
                    .collect::<Result<_>>()?;
                self.shape_weights = parts.try_into().map_err(|_| {
                    Error::Config("`shape_weights` needs three comma-separated values".into())
                })?;
            }
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown generator key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = GenConfig::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
