use std::fmt::Write;

use crate::detection::LossConfig;
use crate::head::Orientation;
use crate::model::ModelConfig;
use crate::trainer::SgdConfig;
use crate::{Error, Result};

/// Every training hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub base_size: usize,
    pub scales: Vec<f64>,
    pub alpha: f64,
    pub capsule_p5: usize,
    pub capsule_p10: usize,
    pub width: f64,
    pub hidden: usize,
    pub orientation: Orientation,
    pub classes: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0003,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 4,
            base_size: 300,
            scales: vec![0.75, 1.0, 1.25],
            alpha: 0.1,
            capsule_p5: 3,
            capsule_p10: 4,
            width: 1.0,
            hidden: 64,
            orientation: Orientation::Vertical,
            classes: 3,
            iterations: 2000,
            seed: 0,
        }
    }
}

/// Keys understood by [`TrainConfig::set`], in the order they are written out.
pub const TRAIN_KEYS: [&str; 15] = [
    "learning_rate",
    "momentum",
    "weight_decay",
    "batch_size",
    "base_size",
    "scales",
    "alpha",
    "capsule_p5",
    "capsule_p10",
    "width",
    "hidden",
    "orientation",
    "classes",
    "iterations",
    "seed",
];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "base_size" => self.base_size = parse(key, v)?,
            "scales" => {
                self.scales = v
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "alpha" => self.alpha = parse(key, v)?,
            "capsule_p5" => self.capsule_p5 = parse(key, v)?,
            "capsule_p10" => self.capsule_p10 = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "orientation" => self.orientation = v.parse()?,
            "classes" => self.classes = parse(key, v)?,
            "iterations" => self.iterations = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("width", self.width),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        for (k, v) in [("momentum", self.momentum), ("weight_decay", self.weight_decay), ("alpha", self.alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be non-negative, got {v}")));
            }
        }
        if self.batch_size == 0 || self.base_size == 0 || self.iterations == 0 {
            return Err(Error::Config("batch_size, base_size and iterations must be positive".into()));
        }
        if self.scales.is_empty() || self.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("scales must be a non-empty list of positive numbers, got {:?}", self.scales)));
        }
        self.model().validate()
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            width: self.width,
            classes: self.classes,
            orientation: self.orientation,
            hidden: self.hidden,
            capsule_p5: self.capsule_p5,
            capsule_p10: self.capsule_p10,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { learning_rate: self.learning_rate, momentum: self.momentum, weight_decay: self.weight_decay }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { alpha: self.alpha, ..LossConfig::default() }
    }

    /// Input sides used for training, one per scale.
    pub fn input_sizes(&self) -> Vec<usize> {
        self.scales.iter().map(|s| (s * self.base_size as f64).round() as usize).collect()
    }

    pub fn value_of(&self, key: &str) -> Option<String> {
        Some(match key {
            "learning_rate" => self.learning_rate.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "base_size" => self.base_size.to_string(),
            "scales" => self.scales.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", "),
            "alpha" => self.alpha.to_string(),
            "capsule_p5" => self.capsule_p5.to_string(),
            "capsule_p10" => self.capsule_p10.to_string(),
            "width" => self.width.to_string(),
            "hidden" => self.hidden.to_string(),
            "orientation" => self.orientation.to_string(),
            "classes" => self.classes.to_string(),
            "iterations" => self.iterations.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// `key = value` lines for every key.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in TRAIN_KEYS {
            writeln!(s, "{k} = {}", self.value_of(k).unwrap()).unwrap();
        }
        s
    }
}

/// Splits `key = value` text into pairs; `#` starts a comment.
pub fn parse_key_values(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            msg: format!("expected `key = value`, found `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
