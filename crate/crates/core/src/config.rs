//! Training configuration and its `key = value` text form.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{DsieError, Result};
use crate::params::Dims;

/// Model variant used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Full,
    /// Contrastive term removed.
    NoCl,
    /// Global scale removed: guided attention fixed to 1, per-interest
    /// retrieval with rerank instead of aggregation.
    NoGs,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCl => "no_cl",
            Variant::NoGs => "no_gs",
        }
    }
}

impl FromStr for Variant {
    type Err = DsieError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_cl" => Ok(Variant::NoCl),
            "no_gs" => Ok(Variant::NoGs),
            other => Err(DsieError::Config(format!(
                "unknown variant {other:?} (full, no_cl, no_gs)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub max_len: usize,
    pub layers: usize,
    pub interests: usize,
    pub tau: f64,
    pub alpha_reg: f64,
    pub beta_cl: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub max_samples_per_user: Option<usize>,
    pub valid_topn: usize,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 128,
            max_len: 20,
            layers: 2,
            interests: 4,
            tau: 0.1,
            alpha_reg: 0.1,
            beta_cl: 0.4,
            negatives: 10,
            batch_size: 128,
            learning_rate: 0.001,
            patience: 20,
            max_epochs: 200,
            seed: 0,
            max_samples_per_user: None,
            valid_topn: 50,
            variant: Variant::Full,
        }
    }
}

pub const KEYS: [&str; 16] = [
    "dim",
    "max_len",
    "layers",
    "interests",
    "tau",
    "alpha_reg",
    "beta_cl",
    "negatives",
    "batch_size",
    "learning_rate",
    "patience",
    "max_epochs",
    "seed",
    "max_samples_per_user",
    "valid_topn",
    "variant",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| DsieError::Config(format!("{key} = {value:?}: {e}")))
}

impl TrainConfig {
    pub fn dims(&self, items: usize) -> Dims {
        Dims {
            items,
            dim: self.dim,
            layers: self.layers,
            interests: self.interests,
        }
    }

    pub fn uses_global_scale(&self) -> bool {
        self.variant != Variant::NoGs
    }

    /// Contrastive weight actually applied.
    pub fn effective_beta(&self) -> f64 {
        if self.uses_global_scale() {
            self.beta_cl
        } else {
            0.0
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "dim" => self.dim = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "interests" => self.interests = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "alpha_reg" => self.alpha_reg = parse(key, value)?,
            "beta_cl" => self.beta_cl = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_samples_per_user" => {
                self.max_samples_per_user = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "valid_topn" => self.valid_topn = parse(key, value)?,
            "variant" => self.variant = value.parse()?,
            other => return Err(DsieError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "dim" => self.dim.to_string(),
            "max_len" => self.max_len.to_string(),
            "layers" => self.layers.to_string(),
            "interests" => self.interests.to_string(),
            "tau" => self.tau.to_string(),
            "alpha_reg" => self.alpha_reg.to_string(),
            "beta_cl" => self.beta_cl.to_string(),
            "negatives" => self.negatives.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "patience" => self.patience.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "seed" => self.seed.to_string(),
            "max_samples_per_user" => self
                .max_samples_per_user
                .map_or_else(|| "none".to_string(), |v| v.to_string()),
            "valid_topn" => self.valid_topn.to_string(),
            "variant" => self.variant.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("max_len", self.max_len),
            ("layers", self.layers),
            ("interests", self.interests),
            ("negatives", self.negatives),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("valid_topn", self.valid_topn),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(DsieError::Config(format!("{k} must be positive")));
            }
        }
        if self.max_samples_per_user == Some(0) {
            return Err(DsieError::Config("max_samples_per_user must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(DsieError::Config("tau must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DsieError::Config("learning_rate must be positive".into()));
        }
        for (k, v) in [("alpha_reg", self.alpha_reg), ("beta_cl", self.beta_cl)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DsieError::Config(format!("{k} must be non-negative")));
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines over the current values. Blank lines and
    /// `#` comments are ignored; unknown keys are rejected.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (pairs_key, value) in parse_key_values(text)? {
            self.set(&pairs_key, &value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }
}

/// Parses `key = value` lines, keeping the last value for repeated keys.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DsieError::Config(format!("line {}: expected key = value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Config for an ablation variant derived from `base`.
pub fn ablation_variant(base: &TrainConfig, variant: &str) -> Result<TrainConfig> {
    let variant: Variant = variant.parse()?;
    let mut cfg = base.clone();
    cfg.variant = variant;
    match variant {
        Variant::Full => {}
        Variant::NoCl | Variant::NoGs => cfg.beta_cl = 0.0,
    }
    Ok(cfg)
}
