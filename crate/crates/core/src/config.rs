//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; lists are comma-separated.
//! Absent keys take their defaults. [`RunConfig::echo`] renders every key,
//! and parsing the echo gives back an identical config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{LossWeights, ModelDims, Precision};
use crate::operators::{KernelMode, SECONDS_PER_DAY};
use crate::training::{AdamConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Temporal,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub interactions: Option<PathBuf>,
    pub features: Vec<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Include a free-embedding ID modality besides the feature modalities.
    pub id_modality: bool,
    pub dim: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub layers: usize,
    pub k: usize,
    pub tau: Vec<f64>,
    pub kernel: KernelKind,
    /// Seconds per kernel time unit.
    pub time_unit: f64,
    pub temperature: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub sigma_min: f64,
    pub lambda_var: f64,
    pub eps: f64,
    pub lr: f64,
    pub negatives: usize,
    pub window_fraction: f64,
    pub patience: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub noise_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            interactions: None,
            features: Vec::new(),
            output_dir: None,
            id_modality: true,
            dim: 64,
            hidden: 64,
            batch_size: 2048,
            layers: 2,
            k: 3,
            tau: vec![0.5, 2.0, 8.0],
            kernel: KernelKind::Temporal,
            time_unit: SECONDS_PER_DAY,
            temperature: 1.0,
            lambda: 0.01,
            gamma: 1e-4,
            sigma_min: 0.1,
            lambda_var: 1.0,
            eps: 1e-8,
            lr: 1e-4,
            negatives: 1,
            window_fraction: 0.1,
            patience: 10,
            epochs: 200,
            seed: 0,
            precision: Precision::F32,
            noise_scale: 0.05,
        }
    }
}

pub const KEYS: &[&str] = &[
    "interactions",
    "features",
    "output_dir",
    "id_modality",
    "dim",
    "hidden",
    "batch_size",
    "layers",
    "k",
    "tau",
    "kernel",
    "time_unit",
    "temperature",
    "lambda",
    "gamma",
    "sigma_min",
    "lambda_var",
    "eps",
    "lr",
    "negatives",
    "window_fraction",
    "patience",
    "epochs",
    "seed",
    "precision",
    "noise_scale",
];

fn parse_value<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("expected {what}, got `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_value::<f64>(key, v.trim(), "a comma-separated list of numbers"))
        .collect()
}

fn path_list(value: &str) -> Vec<PathBuf> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .collect()
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::default().with_overrides(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
    }

    /// Applies `key = value` lines on top of `self`, then validates.
    pub fn with_overrides<'a>(mut self, lines: impl IntoIterator<Item = (usize, &'a str)>) -> Result<Self> {
        let mut k_set = false;
        let mut tau_set = false;
        for (line_no, raw) in lines {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {line_no}"), format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            k_set |= key == "k";
            tau_set |= key == "tau";
            self.set(key, value)?;
        }
        if tau_set && !k_set {
            self.k = self.tau.len();
        }
        self.validate()?;
        Ok(self)
    }

    /// Sets one key from its text form without validating the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "interactions" => self.interactions = optional_path(value),
            "features" => self.features = path_list(value),
            "output_dir" => self.output_dir = optional_path(value),
            "id_modality" => self.id_modality = parse_value(key, value, "true or false")?,
            "dim" => self.dim = parse_value(key, value, "a positive integer")?,
            "hidden" => self.hidden = parse_value(key, value, "a positive integer")?,
            "batch_size" => self.batch_size = parse_value(key, value, "a positive integer")?,
            "layers" => self.layers = parse_value(key, value, "a non-negative integer")?,
            "k" => self.k = parse_value(key, value, "a positive integer")?,
            "tau" => self.tau = parse_list(key, value)?,
            "kernel" => {
                self.kernel = match value {
                    "temporal" => KernelKind::Temporal,
                    "uniform" => KernelKind::Uniform,
                    _ => return Err(Error::config(key, format!("expected `temporal` or `uniform`, got `{value}`"))),
                }
            }
            "time_unit" => self.time_unit = parse_value(key, value, "a number of seconds")?,
            "temperature" => self.temperature = parse_value(key, value, "a number")?,
            "lambda" => self.lambda = parse_value(key, value, "a number")?,
            "gamma" => self.gamma = parse_value(key, value, "a number")?,
            "sigma_min" => self.sigma_min = parse_value(key, value, "a number")?,
            "lambda_var" => self.lambda_var = parse_value(key, value, "a number")?,
            "eps" => self.eps = parse_value(key, value, "a number")?,
            "lr" => self.lr = parse_value(key, value, "a number")?,
            "negatives" => self.negatives = parse_value(key, value, "a positive integer")?,
            "window_fraction" => self.window_fraction = parse_value(key, value, "a number")?,
            "patience" => self.patience = parse_value(key, value, "a non-negative integer")?,
            "epochs" => self.epochs = parse_value(key, value, "a positive integer")?,
            "seed" => self.seed = parse_value(key, value, "an unsigned integer")?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(Error::config(key, format!("expected `f32` or `f64`, got `{value}`"))),
                }
            }
            "noise_scale" => self.noise_scale = parse_value(key, value, "a number")?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive_ints = [
            ("dim", self.dim),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("k", self.k),
            ("negatives", self.negatives),
            ("epochs", self.epochs),
        ];
        for (key, v) in positive_ints {
            if v == 0 {
                return Err(Error::config(key, "must be > 0"));
            }
        }
        let positive_reals = [
            ("time_unit", self.time_unit),
            ("temperature", self.temperature),
            ("sigma_min", self.sigma_min),
            ("eps", self.eps),
            ("lr", self.lr),
            ("window_fraction", self.window_fraction),
        ];
        for (key, v) in positive_reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be finite and > 0, got {v}")));
            }
        }
        for (key, v) in [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("lambda_var", self.lambda_var),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.window_fraction > 1.0 {
            return Err(Error::config("window_fraction", "must be <= 1"));
        }
        if self.kernel == KernelKind::Temporal {
            if self.k != self.tau.len() {
                return Err(Error::config(
                    "tau",
                    format!("k = {} but {} scales were given", self.k, self.tau.len()),
                ));
            }
            if self.tau.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
                return Err(Error::config("tau", "every scale must be finite and > 0"));
            }
            if self.tau.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config("tau", "scales must be strictly increasing"));
            }
        }
        if !self.id_modality && self.features.is_empty() && self.interactions.is_some() {
            return Err(Error::config("id_modality", "no modality left: enable it or give feature files"));
        }
        Ok(())
    }

    /// Every key with its current value; parses back to an identical config.
    pub fn echo(&self) -> String {
        let join_paths = |ps: &[PathBuf]| ps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        for key in KEYS {
            let value = match *key {
                "interactions" => opt(&self.interactions),
                "features" => join_paths(&self.features),
                "output_dir" => opt(&self.output_dir),
                "id_modality" => self.id_modality.to_string(),
                "dim" => self.dim.to_string(),
                "hidden" => self.hidden.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "layers" => self.layers.to_string(),
                "k" => self.k.to_string(),
                "tau" => self.tau.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
                "kernel" => match self.kernel {
                    KernelKind::Temporal => "temporal".into(),
                    KernelKind::Uniform => "uniform".into(),
                },
                "time_unit" => self.time_unit.to_string(),
                "temperature" => self.temperature.to_string(),
                "lambda" => self.lambda.to_string(),
                "gamma" => self.gamma.to_string(),
                "sigma_min" => self.sigma_min.to_string(),
                "lambda_var" => self.lambda_var.to_string(),
                "eps" => self.eps.to_string(),
                "lr" => self.lr.to_string(),
                "negatives" => self.negatives.to_string(),
                "window_fraction" => self.window_fraction.to_string(),
                "patience" => self.patience.to_string(),
                "epochs" => self.epochs.to_string(),
                "seed" => self.seed.to_string(),
                "precision" => match self.precision {
                    Precision::F32 => "f32".into(),
                    Precision::F64 => "f64".into(),
                },
                "noise_scale" => self.noise_scale.to_string(),
                _ => unreachable!("every key is rendered"),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }

    pub fn kernel_mode(&self) -> KernelMode {
        match self.kernel {
            KernelKind::Temporal => KernelMode::Temporal {
                scales: self.tau.clone(),
                time_unit: self.time_unit,
            },
            KernelKind::Uniform => KernelMode::Uniform { k: self.k },
        }
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            dim: self.dim,
            hidden: self.hidden,
            layers: self.layers,
            temperature: self.temperature,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            gamma: self.gamma,
            sigma_min: self.sigma_min,
            lambda_var: self.lambda_var,
            eps: self.eps,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            negatives: self.negatives,
            max_epochs: self.epochs,
            patience: self.patience,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            weights: self.loss_weights(),
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# only a comment\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn scale_count_must_match_k() {
        match RunConfig::parse("tau = 1.0,4.0\nk = 3\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "tau"),
            other => panic!("{other:?}"),
        }
        let cfg = RunConfig::parse("tau = 1.0, 4.0  # two scales\n").unwrap();
        assert_eq!(cfg.k, 2);
    }

    #[test]
    fn type_error_names_the_key() {
        match RunConfig::parse("lr = fast") {
            Err(Error::Config { key, message }) => {
                assert_eq!(key, "lr");
                assert!(message.contains("fast"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(
            RunConfig::parse("learning_rate = 0.1"),
            Err(Error::Config { key, .. }) if key == "learning_rate"
        ));
        assert!(matches!(RunConfig::parse("dim 64"), Err(Error::Config { key, .. }) if key == "line 1"));
    }

    #[test]
    fn constraint_violations() {
        assert!(RunConfig::parse("dim = 0").is_err());
        assert!(RunConfig::parse("lr = -1").is_err());
        assert!(RunConfig::parse("tau = 2.0,1.0").is_err());
        assert!(RunConfig::parse("precision = f16").is_err());
        assert!(RunConfig::parse("kernel = uniform\nk = 1").is_ok());
    }

    #[test]
    fn echo_roundtrip() {
        let cfg = RunConfig::parse(
            "interactions = data/log.tsv\nfeatures = a.bin, b.bin\nlr = 0.0005\ntau = 0.25,1.5,6.125\nseed = 7\nprecision = f64\n",
        )
        .unwrap();
        let back = RunConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.features.len(), 2);
        assert_eq!(RunConfig::parse(&RunConfig::default().echo()).unwrap(), RunConfig::default());
    }
}
