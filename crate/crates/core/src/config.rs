//! Pipeline configuration. Every section deserializes with defaults, so a
//! config file only needs the keys it changes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::ChannelMode;
use crate::preprocess::FilterSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_rate_hz: f64,
    pub cutoff_hz: f64,
    pub filter_order: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_rate_hz: 100.0,
            cutoff_hz: 10.0,
            filter_order: 2,
        }
    }
}

impl PreprocessConfig {
    pub fn filter(&self) -> FilterSpec {
        FilterSpec {
            cutoff_hz: self.cutoff_hz,
            order: self.filter_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub var_window_ms: f64,
    pub stable_window_ms: f64,
    pub min_fluct_ms: f64,
    pub window_ms: f64,
    pub delta_override: Option<f64>,
    /// Subcarriers whose phase difference drives segmentation; `None` uses
    /// the evenly spread feature subcarriers.
    pub subcarriers: Option<Vec<usize>>,
    pub link_a: usize,
    pub link_b: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            var_window_ms: 200.0,
            stable_window_ms: 1000.0,
            min_fluct_ms: 500.0,
            window_ms: 3000.0,
            delta_override: None,
            subcarriers: None,
            link_a: 0,
            link_b: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub channels: ChannelMode,
    pub n_subcarriers: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            channels: ChannelMode::AmplitudeAndPhase,
            n_subcarriers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub nu: f64,
    /// RBF width; `None` means `gamma_scale / feature dimension`.
    pub gamma: Option<f64>,
    pub gamma_scale: f64,
    pub grid_search: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            nu: 0.03,
            gamma: None,
            gamma_scale: 0.3,
            grid_search: false,
        }
    }
}

impl SvmConfig {
    pub fn gamma_for(&self, dim: usize) -> f64 {
        self.gamma.unwrap_or(self.gamma_scale / dim.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub match_tol_ms: f64,
    pub folds: usize,
    pub split_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_tol_ms: 500.0,
            folds: 5,
            split_seed: 2017,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub preprocess: PreprocessConfig,
    pub segment: SegmentConfig,
    pub features: FeatureConfig,
    pub svm: SvmConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one dotted key, e.g. `segment.window_ms=2900`. The value is parsed
    /// as JSON, falling back to a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let parsed: serde_json::Value = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        let mut tree = serde_json::to_value(&*self)?;
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let slot = tree
            .get_mut(section)
            .and_then(|s| s.get_mut(field))
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        *slot = parsed;
        let next: Config = serde_json::from_value(tree).map_err(|e| ConfigError::BadValue {
            key: key.to_string(),
            reason: e.to_string(),
        })?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: &str| {
            Err(ConfigError::BadValue {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if !(self.preprocess.target_rate_hz > 0.0) {
            return bad("preprocess.target_rate_hz", "must be positive");
        }
        if self
            .preprocess
            .filter()
            .validate(self.preprocess.target_rate_hz)
            .is_err()
        {
            return bad("preprocess.cutoff_hz", "must be in (0, rate/2) with order >= 1");
        }
        let s = &self.segment;
        if !(s.var_window_ms > 0.0 && s.stable_window_ms > 0.0 && s.window_ms > 0.0) {
            return bad("segment", "window durations must be positive");
        }
        if s.min_fluct_ms < 0.0 {
            return bad("segment.min_fluct_ms", "must be non-negative");
        }
        if s.link_a == s.link_b {
            return bad("segment.link_b", "must differ from link_a");
        }
        if self.features.n_subcarriers < 2 {
            return bad("features.n_subcarriers", "must be >= 2");
        }
        if !(self.svm.nu > 0.0 && self.svm.nu <= 1.0) {
            return bad("svm.nu", "must be in (0, 1]");
        }
        if matches!(self.svm.gamma, Some(g) if !(g > 0.0)) {
            return bad("svm.gamma", "must be positive");
        }
        if !(self.svm.gamma_scale > 0.0 && self.svm.gamma_scale.is_finite()) {
            return bad("svm.gamma_scale", "must be positive");
        }
        if self.eval.folds < 2 {
            return bad("eval.folds", "must be >= 2");
        }
        Ok(())
    }
}
