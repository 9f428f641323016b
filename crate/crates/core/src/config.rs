//! Engine configuration read from TOML. Every section and key is
//! optional; missing values take their defaults.
//!
//! ```toml
//! [similarity.weights]
//! prize = 1.0
//! type = 2.0
//!
//! [platform]
//! arrival_rate = "littles-law"
//!
//! [train]
//! max_epochs = 30
//!
//! [eval]
//! moving_average_window = 7
//!
//! [ingest]
//! exclude_cancelled = true
//! epoch = "2015-01-01"
//! ```

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalConfig;
use crate::platform::PlatformConfig;
use crate::predictor::{TrainConfig, TrainError};
use crate::scheduler::ScheduleMode;
use crate::similarity::{SimilarityError, SimilarityWeights};
use crate::task::LoadOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Weights(#[from] SimilarityError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySection {
    pub weights: SimilarityWeights,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub exclude_cancelled: bool,
    pub epoch: Option<NaiveDate>,
}

impl IngestConfig {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            exclude_cancelled: self.exclude_cancelled,
            epoch: self.epoch,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub mode: ScheduleMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub similarity: SimilaritySection,
    pub platform: PlatformConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ingest: IngestConfig,
    pub schedule: ScheduleConfig,
}

impl EngineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.similarity.weights.normalized()?;
        self.train.validate()?;
        if self.eval.moving_average_window == 0 {
            return Err(ConfigError::Invalid("eval.moving_average_window must be >= 1".into()));
        }
        if self.eval.pred_thresholds.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(ConfigError::Invalid(
                "eval.pred_thresholds must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::ArrivalRateEstimator;

    #[test]
    fn empty_is_default() {
        assert_eq!(EngineConfig::from_toml_str("").unwrap(), EngineConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = EngineConfig::from_toml_str(
            r#"
            [similarity.weights]
            type = 3.0
            [platform]
            arrival_rate = "littles-law"
            [train]
            max_epochs = 7
            [ingest]
            epoch = "2015-01-01"
            exclude_cancelled = true
            [schedule]
            mode = "rolling"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.similarity.weights.task_type, 3.0);
        assert_eq!(cfg.platform.arrival_rate, ArrivalRateEstimator::LittlesLaw);
        assert_eq!(cfg.train.max_epochs, 7);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.ingest.epoch, NaiveDate::from_ymd_opt(2015, 1, 1));
        assert!(cfg.ingest.load_options().exclude_cancelled);
        assert_eq!(cfg.schedule.mode, ScheduleMode::Rolling);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            EngineConfig::from_toml_str("[train]\nbogus = 1"),
            Err(ConfigError::Toml(_))
        ));
        assert!(matches!(
            EngineConfig::from_toml_str("[train]\nkfold_k = 1"),
            Err(ConfigError::Train(_))
        ));
        assert!(matches!(
            EngineConfig::from_toml_str("[similarity.weights]\nprize = -1.0"),
            Err(ConfigError::Weights(_))
        ));
        assert!(matches!(
            EngineConfig::from_toml_str("[eval]\nmoving_average_window = 0"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn round_trip() {
        let mut cfg = EngineConfig::default();
        cfg.train.seed = 9;
        cfg.ingest.epoch = NaiveDate::from_ymd_opt(2014, 6, 2);
        assert_eq!(EngineConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }
}
