//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are dotted and
//! grouped by component; see [`TrainConfig::KEYS`] for the full table.

use std::path::{Path, PathBuf};

use super::TrainError;
use crate::accountant::AccountantMode;
use crate::augment::AugmentConfig;
use crate::dp::{DpConfig, WeightScheme};
use crate::imu::{DEFAULT_RATE_HZ, DEFAULT_STRIDE, DEFAULT_WINDOW};
use crate::metrics::{DEFAULT_RTE_INTERVAL_S, DEFAULT_SC_WINDOW_S};
use crate::model::{ModelConfig, Preset};

/// How per-step gradients are privatized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    /// Truncated SVD, singular-value clipping and aligned noise per tensor.
    Gani,
    /// Global clipping plus isotropic noise.
    DpSgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpSettings {
    pub enabled: bool,
    pub mechanism: Mechanism,
    pub accountant: AccountantMode,
    pub engine: DpConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
    pub dp: DpSettings,
    pub aug: AugmentConfig,
    pub data_train: Option<PathBuf>,
    pub data_val: Option<PathBuf>,
    /// Share of sequences held out when no validation path is given.
    pub val_fraction: f64,
    pub window: usize,
    pub stride: usize,
    pub val_stride: usize,
    pub rate_hz: f64,
    pub rte_interval_s: f64,
    pub sc_window_s: f64,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Nano,
            model: ModelConfig::preset(Preset::Nano),
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            momentum: 0.9,
            plateau_factor: 0.1,
            plateau_patience: 10,
            seed: 0,
            dp: DpSettings { enabled: false, mechanism: Mechanism::Gani, accountant: AccountantMode::SubsampledGaussian, engine: DpConfig::default() },
            aug: AugmentConfig::default(),
            data_train: None,
            data_val: None,
            val_fraction: 0.2,
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            val_stride: DEFAULT_STRIDE,
            rate_hz: DEFAULT_RATE_HZ,
            rte_interval_s: DEFAULT_RTE_INTERVAL_S,
            sc_window_s: DEFAULT_SC_WINDOW_S,
            out_dir: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, TrainError> {
    v.parse().map_err(|_| TrainError::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, TrainError> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(TrainError::Config(format!("bad boolean `{v}` for `{key}`"))),
    }
}

impl TrainConfig {
    /// Recognized keys. `model.<field>` accepts any model field as well.
    pub const KEYS: &'static [&'static str] = &[
        "model.preset",
        "train.epochs",
        "train.batch_size",
        "train.lr",
        "train.momentum",
        "train.plateau_factor",
        "train.plateau_patience",
        "train.seed",
        "dp.enabled",
        "dp.mechanism",
        "dp.accountant",
        "dp.k",
        "dp.sigma",
        "dp.clip_init",
        "dp.momentum",
        "dp.delta",
        "dp.weights",
        "aug.enabled",
        "aug.theta_max",
        "aug.delta_s",
        "aug.delta_k",
        "aug.sigma",
        "data.train",
        "data.val",
        "data.val_fraction",
        "data.window",
        "data.stride",
        "data.val_stride",
        "data.rate_hz",
        "metrics.rte_interval_s",
        "metrics.sc_window_s",
        "out.dir",
    ];

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let v = value.trim();
        match key {
            "model.preset" => {
                // a preset resets the architecture; later model.* keys refine it
                self.preset = v.parse().map_err(|e: crate::model::ModelError| TrainError::Config(e.to_string()))?;
                self.model = ModelConfig::preset(self.preset);
            }
            k if k.starts_with("model.") => {
                self.model.set(&k["model.".len()..], v).map_err(|e| TrainError::Config(e.to_string()))?;
            }
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.momentum" => self.momentum = parse(key, v)?,
            "train.plateau_factor" => self.plateau_factor = parse(key, v)?,
            "train.plateau_patience" => self.plateau_patience = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "dp.enabled" => self.dp.enabled = parse_bool(key, v)?,
            "dp.mechanism" => {
                self.dp.mechanism = match v {
                    "gani" => Mechanism::Gani,
                    "dpsgd" => Mechanism::DpSgd,
                    _ => return Err(TrainError::Config(format!("unknown mechanism `{v}`"))),
                }
            }
            "dp.accountant" => self.dp.accountant = v.parse().map_err(|e: crate::accountant::AccountantError| TrainError::Config(e.to_string()))?,
            "dp.k" => self.dp.engine.rank_k = parse(key, v)?,
            "dp.sigma" => self.dp.engine.sigma = parse(key, v)?,
            "dp.clip_init" => self.dp.engine.clip_init = parse(key, v)?,
            "dp.momentum" => self.dp.engine.momentum = parse(key, v)?,
            "dp.delta" => self.dp.engine.delta = parse(key, v)?,
            "dp.weights" => self.dp.engine.weights = v.parse::<WeightScheme>().map_err(|e| TrainError::Config(e.to_string()))?,
            "aug.enabled" => self.aug.enabled = parse_bool(key, v)?,
            "aug.theta_max" => self.aug.theta_max = parse(key, v)?,
            "aug.delta_s" => self.aug.delta_s = parse(key, v)?,
            "aug.delta_k" => self.aug.delta_k = parse(key, v)?,
            "aug.sigma" => self.aug.noise_sigma = parse(key, v)?,
            "data.train" => self.data_train = Some(PathBuf::from(v)),
            "data.val" => self.data_val = Some(PathBuf::from(v)),
            "data.val_fraction" => self.val_fraction = parse(key, v)?,
            "data.window" => self.window = parse(key, v)?,
            "data.stride" => self.stride = parse(key, v)?,
            "data.val_stride" => self.val_stride = parse(key, v)?,
            "data.rate_hz" => self.rate_hz = parse(key, v)?,
            "metrics.rte_interval_s" => self.rte_interval_s = parse(key, v)?,
            "metrics.sc_window_s" => self.sc_window_s = parse(key, v)?,
            "out.dir" => self.out_dir = Some(PathBuf::from(v)),
            _ => return Err(TrainError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<(), TrainError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| TrainError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.model.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        if self.model.input_length != self.window {
            return bad(format!("window {} differs from model input length {}", self.window, self.model.input_length));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau factor {} outside (0, 1)", self.plateau_factor));
        }
        if self.stride == 0 || self.val_stride == 0 || !(self.rate_hz > 0.0) {
            return bad("strides and rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} outside [0, 1)", self.val_fraction));
        }
        if self.dp.enabled {
            self.dp.engine.validate().map_err(|e| TrainError::Config(e.to_string()))?;
            if !(self.dp.engine.sigma > 0.0) {
                return bad("dp.sigma must be positive when dp is enabled".into());
            }
        }
        self.aug.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }

    /// Effective settings as `key = value` pairs, in table order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out: Vec<(String, String)> = vec![("model.preset".into(), self.preset.to_string())];
        out.extend(self.model.to_kv().into_iter().map(|(k, v)| (format!("model.{k}"), v)));
        let rest: Vec<(&str, String)> = vec![
            ("train.epochs", self.epochs.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.lr", format!("{:?}", self.lr)),
            ("train.momentum", format!("{:?}", self.momentum)),
            ("train.plateau_factor", format!("{:?}", self.plateau_factor)),
            ("train.plateau_patience", self.plateau_patience.to_string()),
            ("train.seed", self.seed.to_string()),
            ("dp.enabled", self.dp.enabled.to_string()),
            ("dp.mechanism", if self.dp.mechanism == Mechanism::Gani { "gani" } else { "dpsgd" }.to_string()),
            ("dp.accountant", self.dp.accountant.to_string()),
            ("dp.k", self.dp.engine.rank_k.to_string()),
            ("dp.sigma", format!("{:?}", self.dp.engine.sigma)),
            ("dp.clip_init", format!("{:?}", self.dp.engine.clip_init)),
            ("dp.momentum", format!("{:?}", self.dp.engine.momentum)),
            ("dp.delta", format!("{:?}", self.dp.engine.delta)),
            ("dp.weights", self.dp.engine.weights.to_string()),
            ("aug.enabled", self.aug.enabled.to_string()),
            ("aug.theta_max", format!("{:?}", self.aug.theta_max)),
            ("aug.delta_s", format!("{:?}", self.aug.delta_s)),
            ("aug.delta_k", format!("{:?}", self.aug.delta_k)),
            ("aug.sigma", format!("{:?}", self.aug.noise_sigma)),
            ("data.train", p(&self.data_train)),
            ("data.val", p(&self.data_val)),
            ("data.val_fraction", format!("{:?}", self.val_fraction)),
            ("data.window", self.window.to_string()),
            ("data.stride", self.stride.to_string()),
            ("data.val_stride", self.val_stride.to_string()),
            ("data.rate_hz", format!("{:?}", self.rate_hz)),
            ("metrics.rte_interval_s", format!("{:?}", self.rte_interval_s)),
            ("metrics.sc_window_s", format!("{:?}", self.sc_window_s)),
            ("out.dir", p(&self.out_dir)),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }
}
