//! Training configuration file.
//!
//! A TOML document; every key is optional. Model keys live under `[model]`.
//! Command-line overrides use the same dotted names, for example
//! `--set model.c2=16 --set steps=500`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, DOWNSAMPLE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Directory of training images; the synthetic set is used when absent.
    pub dataset_dir: Option<PathBuf>,
    pub synthetic_images: usize,
    pub synthetic_size: usize,
    pub crop: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub lr_drop: f64,
    /// First step that uses `lr_drop`.
    pub lr_drop_step: usize,
    /// Global gradient-norm clip, 0 disables.
    pub clip_norm: f64,
    pub seed: u64,
    pub log_every: usize,
    /// Checkpoint period in steps, 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset_dir: None,
            synthetic_images: 200,
            synthetic_size: 96,
            crop: 48,
            batch: 8,
            steps: 2000,
            lr: 1e-3,
            lr_drop: 1e-4,
            lr_drop_step: 1500,
            clip_norm: 1.0,
            seed: 7,
            log_every: 100,
            checkpoint_every: 500,
            out_dir: PathBuf::from("runs/desk"),
            model: ModelConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // a bare word that is not valid TOML is taken as a string
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(Error::Config(format!("malformed key `{key}`")));
        }
        if parts.peek().is_none() {
            cur.insert(part.to_string(), value);
            return Ok(());
        }
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    Ok(())
}

impl TrainConfig {
    /// Parses a TOML document with `key=value` overrides applied on top.
    ///
    /// Model fields fall back to the desk configuration for the resulting
    /// widths, so setting only `model.c2` also rescales `group_size`.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let mut model_table = match table.remove("model") {
            None => toml::Table::new(),
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(Error::Config("`model` must be a table".into())),
        };
        let width = |key: &str, default: usize| -> Result<usize> {
            match model_table.get(key) {
                None => Ok(default),
                Some(v) => v
                    .as_integer()
                    .and_then(|i| usize::try_from(i).ok())
                    .ok_or_else(|| {
                        Error::Config(format!("model.{key} must be a nonnegative integer"))
                    }),
            }
        };
        let base = ModelConfig::desk(width("c1", 32)?, width("c2", 32)?);
        let mut full = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(metric) = model_table.get("metric").and_then(|m| m.as_str()) {
            if !model_table.contains_key("lambda") {
                let m: crate::config::Metric =
                    toml::Value::String(metric.to_string())
                        .try_into()
                        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
                model_table.insert("lambda".into(), toml::Value::Float(m.default_lambda()));
            }
        }
        full.extend(model_table);
        table.insert("model".into(), toml::Value::Table(full));
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.crop == 0 || !self.crop.is_multiple_of(DOWNSAMPLE) {
            return fail(format!(
                "crop {} must be a positive multiple of {DOWNSAMPLE}",
                self.crop
            ));
        }
        if self.batch == 0 || self.steps == 0 {
            return fail("batch and steps must be positive".into());
        }
        if self.dataset_dir.is_none()
            && (self.synthetic_images == 0 || self.synthetic_size < self.crop)
        {
            return fail(
                "the synthetic set needs at least one image no smaller than the crop".into(),
            );
        }
        if !(self.lr > 0.0 && self.lr_drop > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if self.lr_drop_step > self.steps {
            return fail(format!(
                "lr_drop_step {} is past the last step {}",
                self.lr_drop_step, self.steps
            ));
        }
        if self.clip_norm < 0.0 {
            return fail("clip_norm must be nonnegative".into());
        }
        Ok(())
    }

    /// Learning rate for a 1-based step.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step >= self.lr_drop_step && self.lr_drop_step > 0 {
            self.lr_drop
        } else {
            self.lr
        }
    }
}
