use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationConfig;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_BOUNDARY_FRACTION;
use crate::scribble_robot::{AffineJitter, RobotConfig};
use crate::segmenter::SegmenterConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Boundary tolerance as a fraction of the image diagonal.
    pub boundary_fraction: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            boundary_fraction: DEFAULT_BOUNDARY_FRACTION,
        }
    }
}

/// Everything the CLI and server read from a TOML config file. Missing
/// tables and keys take their defaults; unknown keys are rejected.
///
/// ```toml
/// [segmenter]
/// threshold = 0.8
///
/// [segmenter.head]
/// kappa = 10.0
/// beta = 0.5
///
/// [robot]
/// rounds = 8
///
/// [calibration]
/// iterations = 20
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub segmenter: SegmenterConfig,
    pub jitter: AffineJitter,
    pub robot: RobotConfig,
    pub metrics: MetricsConfig,
    pub calibration: CalibrationConfig,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Document(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
        Self::from_toml(&text).map_err(|e| Error::load(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = AppConfig::default();
        assert_eq!(AppConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(AppConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn partial_and_unknown_keys() {
        let cfg =
            AppConfig::from_toml("[segmenter.head]\nbeta = 0.25\n[robot]\nrounds = 3\n").unwrap();
        assert_eq!(cfg.segmenter.head.beta, 0.25);
        assert_eq!(cfg.segmenter.head.kappa, 10.0);
        assert_eq!(cfg.robot.rounds, 3);
        assert!(AppConfig::from_toml("[robot]\nround = 3\n").is_err());
    }
}
