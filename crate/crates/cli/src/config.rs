use std::path::Path;

use neuroamp::dataset::{PairingMode, SynthConfig};
use neuroamp::nn::{ModelConfig, TrainConfig};
use neuroamp::prescription::{HearingLossPattern, LossShape, Severity};
use neuroamp::signal::{StftConfig, SAMPLE_RATE_HZ};
use neuroamp::wdrc::CompressorConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// How reference targets are generated for a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub mode: PairingMode,
    /// Audiograms paired with each utterance.
    pub per_utt: usize,
    /// Size of the generated audiogram bank when none is supplied.
    pub n_audiograms: usize,
    pub patterns: Vec<HearingLossPattern>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            mode: PairingMode::NeuroAmp,
            per_utt: 2,
            n_audiograms: 2,
            patterns: vec![
                HearingLossPattern { shape: LossShape::GentlySloping, severity: Severity::Moderate, jitter_db: 5.0 },
                HearingLossPattern { shape: LossShape::SteeplySloping, severity: Severity::Mild, jitter_db: 5.0 },
            ],
        }
    }
}

/// Everything a run depends on. Loaded from `--config`, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub stft: StftConfig,
    pub compressor: CompressorConfig,
    pub synth: SynthConfig,
    pub targets: TargetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            stft: StftConfig::default(),
            compressor: CompressorConfig::default(),
            synth: SynthConfig::default(),
            targets: TargetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: neuroamp::Error| CliError::Usage(e.to_string());
        if self.jobs == 0 {
            return Err(CliError::Usage("jobs must be at least 1".into()));
        }
        self.stft.validate().map_err(usage)?;
        self.compressor.validate(SAMPLE_RATE_HZ).map_err(usage)?;
        self.synth.split_sizes().map_err(usage)?;
        self.model.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        if self.targets.per_utt == 0 || self.targets.n_audiograms == 0 || self.targets.patterns.is_empty() {
            return Err(CliError::Usage("targets need per_utt ≥ 1, n_audiograms ≥ 1 and at least one pattern".into()));
        }
        Ok(())
    }
}
