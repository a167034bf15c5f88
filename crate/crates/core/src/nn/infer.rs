use super::model::AmpModel;
use crate::dataset::{magnitude_from_features, spectral_features};
use crate::error::Result;
use crate::prescription::Audiogram;
use crate::scalar::Real;
use crate::signal::{from_magnitude_phase, istft, magnitude_phase, stft, Frames, StftConfig, WaveBuffer};

/// Predicted magnitude spectrogram for a waveform, plus the input phase.
pub fn predict_magnitudes<T: Real>(
    model: &AmpModel<T>,
    wave: &WaveBuffer<T>,
    audiogram: &Audiogram,
    stft_cfg: &StftConfig,
) -> Result<(Frames<T>, Frames<T>)> {
    let (mag, phase) = magnitude_phase(&stft(wave, stft_cfg)?);
    let pred = model.forward(&spectral_features(&mag), audiogram)?;
    Ok((magnitude_from_features(&pred), phase))
}

/// Amplify a waveform with the network, reusing the input phase.
pub fn infer<T: Real>(model: &AmpModel<T>, wave: &WaveBuffer<T>, audiogram: &Audiogram, stft_cfg: &StftConfig) -> Result<WaveBuffer<T>> {
    wave.ensure_pipeline_rate()?;
    let (mag, phase) = predict_magnitudes(model, wave, audiogram, stft_cfg)?;
    let spec = from_magnitude_phase(&mag, &phase, *stft_cfg, wave.len(), wave.sample_rate_hz)?;
    istft(&spec)
}
