//! Optional TOML pipeline config. Every key is optional; command-line flags
//! take precedence over file values, which take precedence over defaults.
//!
//! ```toml
//! seed = 7
//! scale = "desk"
//! window_seconds = 10.0
//! max_packets = 10
//! plan = ["time", "tcp_len", "flow_length"]
//!
//! [detector]
//! epochs = 40
//!
//! [gan]
//! iterations = 300
//!
//! [fgsm]
//! epsilon = 0.05
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use floodguard::augment::{FgsmConfig, PerturbationPlan};
use floodguard::detector::DetectorConfig;
use floodguard::gan::GanConfig;
use floodguard::pipeline::Scale;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub scale: Option<Scale>,
    pub window_seconds: Option<f64>,
    pub max_packets: Option<usize>,
    pub plan: Option<PerturbationPlan>,
    pub detector: Option<DetectorConfig>,
    pub gan: Option<GanConfig>,
    pub fgsm: Option<FgsmConfig>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| floodguard::Error::io(path, e)).context("reading config")?;
        toml::from_str(&text)
            .map_err(|e| floodguard::Error::Config(format!("{}: {}", path.display(), e)))
            .context("parsing config")
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
    }

    pub fn detector(&self) -> DetectorConfig {
        self.detector.clone().unwrap_or_default()
    }

    pub fn gan(&self) -> GanConfig {
        self.gan.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_tables_keep_defaults() {
        let c: PipelineConfig = toml::from_str(
            "seed = 3\nplan = [\"tcp_len\", \"flow_length\"]\nscale = \"smoke\"\n[detector]\nepochs = 2\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.detector().epochs, 2);
        assert_eq!(c.detector().filters, DetectorConfig::default().filters);
        assert_eq!(c.plan.unwrap().features().len(), 2);
        assert_eq!(c.scale, Some(Scale::Smoke));
        assert!(toml::from_str::<PipelineConfig>("sed = 3").is_err());
    }
}
