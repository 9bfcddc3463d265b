use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use crate::Format;

/// Settings read from `--config`. Command-line flags win over these.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub format: Option<Format>,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub rank: RankConfig,
    #[serde(default)]
    pub quality: QualityConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub hd_mode: Option<String>,
    pub diameter_axis: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankConfig {
    pub hd_mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityConfig {
    pub margin: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub localizer: Option<String>,
    pub segmenter: Option<String>,
    pub roi: Option<[usize; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub segmenter: Option<String>,
    pub roi: Option<[usize; 3]>,
    pub axis: Option<String>,
    pub offsets: Option<Vec<f64>>,
    pub sizes: Option<Vec<[usize; 2]>>,
    pub depth: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub count: Option<usize>,
    pub dims: Option<[usize; 3]>,
    pub spacing: Option<f64>,
    pub encoding: Option<String>,
    pub tier_fractions: Option<[f64; 3]>,
    pub tier_snr: Option<[f64; 3]>,
    pub center_jitter_mm: Option<f64>,
    pub axis_jitter: Option<f64>,
}

pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 3\n[synth]\ncount = 4").is_ok());
        assert!(toml::from_str::<RunConfig>("sede = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[synth]\ncuont = 4").is_err());
    }
}
