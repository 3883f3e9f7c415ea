use std::path::Path;

use anyhow::Context;
use rpmf::eval::BootstrapConfig;
use rpmf::ingest::IngestConfig;
use rpmf::model::ModelConfig;
use rpmf::sampling::{SplitConfig, WindowSpec};
use rpmf::synth::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_rpm_days: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_rpm_days: 3 }
    }
}

/// Every tunable of the pipeline. Layered as file, then `RPMF_*`
/// environment variables, then flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub ingest: IngestConfig,
    pub filter: FilterConfig,
    pub window: WindowSpec,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub eval: BootstrapConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_patches_defaults() {
        let cfg = RunConfig::from_toml("[model]\nd_model = 16\n[window]\nstride_days = 4.0\n").unwrap();
        assert_eq!(cfg.model.d_model, 16);
        assert_eq!(cfg.model.n_heads, ModelConfig::default().n_heads);
        assert_eq!(cfg.window.stride_days, 4.0);
        assert_eq!(cfg.window.horizon_days, 28.0);
        assert_eq!(cfg.synth, SynthConfig::default());
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(RunConfig::from_toml("[modle]\nd_model = 16\n").is_err());
    }

    #[test]
    fn desk_profile_parses() {
        let text = include_str!("../../../configs/desk.toml");
        let cfg = RunConfig::from_toml(text).unwrap();
        cfg.model.validate().unwrap();
        cfg.window.validate().unwrap();
    }
}
