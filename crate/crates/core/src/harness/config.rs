//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::duration::{de_opt_seconds, de_seconds, ser_opt_seconds, ser_seconds};
use crate::losses::{DpTrainConfig, LossKind};
use crate::metrics::HourWeighting;
use crate::stream::{StreamPolicy, WindowConfig, DAY, HOUR};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    #[serde(deserialize_with = "de_seconds", serialize_with = "ser_seconds")]
    pub w1: u64,
    #[serde(deserialize_with = "de_seconds", serialize_with = "ser_seconds")]
    pub w2: u64,
    #[serde(
        default,
        deserialize_with = "de_opt_seconds",
        serialize_with = "ser_opt_seconds",
        skip_serializing_if = "Option::is_none"
    )]
    pub w3: Option<u64>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            w1: HOUR / 4,
            w2: 7 * DAY,
            w3: None,
        }
    }
}

impl WindowSpec {
    pub fn to_windows(self) -> Result<WindowConfig> {
        let w = WindowConfig::new(self.w1, self.w2)?;
        match self.w3 {
            Some(w3) => w.with_w3(w3),
            None => Ok(w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Dnn,
    Star,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub use_batch_norm: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    /// Inferred from the events when absent.
    pub vocab_sizes: Option<Vec<usize>>,
    /// Inferred from the events when absent.
    pub num_domains: Option<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Dnn,
            embedding_dim: 8,
            hidden: vec![64, 32],
            use_batch_norm: true,
            learning_rate: 0.001,
            batch_size: 256,
            pretrain_epochs: 2,
            vocab_sizes: None,
            num_domains: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Anchors {
    pub pretrained: bool,
    pub oracle: bool,
}

impl Default for Anchors {
    fn default() -> Self {
        Anchors {
            pretrained: true,
            oracle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub windows: WindowSpec,
    pub stream_policy: StreamPolicy,
    pub loss_kind: LossKind,
    /// Share of the click time range used for pretraining.
    pub pretrain_fraction: f64,
    /// Cap on the number of streaming hours.
    pub streaming_hours: Option<usize>,
    pub model: ModelSpec,
    pub dp: DpTrainConfig,
    pub anchors: Anchors,
    pub hour_weighting: HourWeighting,
    /// FNW-RN: use the pure ratio form of the importance weights.
    pub pure_is_ratio: bool,
    /// Click log read by the CLI when no `--events` is given.
    pub events: Option<PathBuf>,
    /// Column profile name for `events`.
    pub profile: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            windows: WindowSpec::default(),
            stream_policy: StreamPolicy::RealNegDup,
            loss_kind: LossKind::Defer,
            pretrain_fraction: 0.5,
            streaming_hours: None,
            model: ModelSpec::default(),
            dp: DpTrainConfig::default(),
            anchors: Anchors::default(),
            hour_weighting: HourWeighting::Count,
            pure_is_ratio: false,
            events: None,
            profile: "native".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let windows = self.windows.to_windows()?;
        self.stream_policy
            .check_windows(&windows)
            .map_err(|e| Error::config(e.to_string()))?;
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction < 1.0) {
            return Err(Error::config(format!(
                "pretrain_fraction must lie in (0, 1), got {}",
                self.pretrain_fraction
            )));
        }
        let m = &self.model;
        if m.embedding_dim == 0 || m.batch_size < 2 || m.hidden.contains(&0) {
            return Err(Error::config("model sizes must be >= 1 and batch_size >= 2"));
        }
        if !(m.learning_rate > 0.0 && m.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.streaming_hours == Some(0) {
            return Err(Error::config("streaming_hours must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn humane_windows_and_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 3
            stream_policy = "real-neg-dup-approx"
            loss_kind = "fnw-rn"
            [windows]
            w1 = "0.25h"
            w2 = "7d"
            w3 = "3d"
            [model]
            hidden = [16]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.windows.w1, 900);
        assert_eq!(cfg.windows.w3, Some(3 * DAY));
        assert_eq!(cfg.loss_kind, LossKind::FnwRn);
        assert_eq!(cfg.model.hidden, vec![16]);
        assert_eq!(cfg.model.embedding_dim, 8);
        assert_eq!(cfg.pretrain_fraction, 0.5);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            "pretrain_fraction = 1.0",
            "[windows]\nw1 = \"2d\"\nw2 = \"1d\"",
            "stream_policy = \"real-neg-dup-approx\"",
            "loss_kind = \"bogus\"",
            "unknown_key = 1",
            "[windows]\nw1 = \"1x\"\nw2 = \"1d\"",
        ];
        for text in bad {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }
}
