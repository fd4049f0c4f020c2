//! Flat `key = value` run configuration.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Everything a command needs besides file paths.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub min_freq: usize,
    pub lowercase: bool,
    /// Longer training sentences are dropped.
    pub train_max_len: usize,
    /// Sentences per inference batch.
    pub eval_batch_size: usize,
    /// Seed of evaluation masks.
    pub eval_seed: u64,
    /// One run per seed; empty means `[model.seed]`.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            min_freq: 1,
            lowercase: false,
            train_max_len: 64,
            eval_batch_size: 64,
            eval_seed: 12345,
            seeds: Vec::new(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "layers",
    "d_model",
    "heads",
    "d_ff",
    "dropout",
    "parser_layers",
    "kernel_width",
    "mask_rate",
    "relations",
    "calibrate",
    "calibrate_target",
    "max_len",
    "precision",
    "attention",
    "seed",
    "seeds",
    "steps",
    "batch_size",
    "lr",
    "warmup",
    "clip",
    "log_every",
    "min_freq",
    "lowercase",
    "train_max_len",
    "eval_batch_size",
    "eval_seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for key {key}; expected on or off"))),
    }
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl RunConfig {
    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "layers" => m.layers = parse(key, value)?,
            "d_model" => m.d_model = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "d_ff" => m.d_ff = parse(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "parser_layers" => m.parser_layers = parse(key, value)?,
            "kernel_width" => m.kernel_width = parse(key, value)?,
            "mask_rate" => m.mask_rate = parse(key, value)?,
            "relations" => m.relations = value.parse()?,
            "calibrate" => m.calibrate = parse_switch(key, value)?,
            "calibrate_target" => m.calibration_target = value.parse()?,
            "max_len" => m.max_len = parse(key, value)?,
            "precision" => m.precision = value.parse()?,
            "attention" => m.attention = value.parse()?,
            "seed" => {
                m.seed = parse(key, value)?;
                t.seed = m.seed;
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "steps" => t.steps = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "warmup" => t.warmup = parse(key, value)?,
            "clip" => t.clip = parse(key, value)?,
            "log_every" => t.log_every = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "lowercase" => self.lowercase = parse_switch(key, value)?,
            "train_max_len" => self.train_max_len = parse(key, value)?,
            "eval_batch_size" => self.eval_batch_size = parse(key, value)?,
            "eval_seed" => self.eval_seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{source}:{}: expected key = value", k + 1)))?;
            self.set(key.trim(), value).map_err(|e| {
                Error::Config(format!(
                    "{source}:{}: {}",
                    k + 1,
                    e.to_string().trim_start_matches("configuration: ")
                ))
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.model.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Checks the model part; the vocabulary size is filled in later.
    pub fn validate(&self) -> Result<()> {
        ModelConfig {
            vocab_size: 1,
            ..self.model.clone()
        }
        .validate()?;
        if self.train.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.train_max_len == 0 || self.train_max_len > self.model.max_len {
            return Err(Error::Config(format!(
                "train_max_len must lie in 1..={}, got {}",
                self.model.max_len, self.train_max_len
            )));
        }
        if self.min_freq == 0 {
            return Err(Error::Config("min_freq must be positive".into()));
        }
        Ok(())
    }

    /// Resolved configuration in the same format `apply_text` reads.
    pub fn echo(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let rows: Vec<(&str, String)> = vec![
            ("layers", m.layers.to_string()),
            ("d_model", m.d_model.to_string()),
            ("heads", m.heads.to_string()),
            ("d_ff", m.d_ff.to_string()),
            ("dropout", m.dropout.to_string()),
            ("parser_layers", m.parser_layers.to_string()),
            ("kernel_width", m.kernel_width.to_string()),
            ("mask_rate", m.mask_rate.to_string()),
            ("relations", m.relations.to_string()),
            ("calibrate", switch(m.calibrate).into()),
            ("calibrate_target", m.calibration_target.to_string()),
            ("max_len", m.max_len.to_string()),
            ("precision", m.precision.to_string()),
            ("attention", m.attention.to_string()),
            ("seed", m.seed.to_string()),
            ("seeds", seeds.join(",")),
            ("steps", t.steps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.lr.to_string()),
            ("warmup", t.warmup.to_string()),
            ("clip", t.clip.to_string()),
            ("log_every", t.log_every.to_string()),
            ("min_freq", self.min_freq.to_string()),
            ("lowercase", switch(self.lowercase).into()),
            ("train_max_len", self.train_max_len.to_string()),
            ("eval_batch_size", self.eval_batch_size.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
