//! Hearing-aid amplification toolkit.
//!
//! * [`signal`]: WAV I/O, STFT/ISTFT and level helpers.
//! * [`prescription`]: audiograms and the NAL-R linear insertion gain.
//! * [`wdrc`]: multiband wide dynamic range compression and the reference
//!   NAL-R + WDRC amplifier.
//! * [`dataset`]: synthetic corpora, SNR mixing, manifests and training pairs.
//! * [`nn`]: a small reverse-mode differentiation engine, the four
//!   audiogram-conditioned amplifier networks, Adam training and inference.
//! * [`metrics`]: correlation statistics and spectral comparison measures.
//!
//! DSP and network code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the precisions used by the end-to-end pipeline.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod scalar;
pub mod prescription;
pub mod nn;
pub mod par;
pub mod signal;
pub mod wdrc;

pub use error::{Error, Result};
pub use scalar::Real;

/// Waveforms flowing through the DSP pipeline.
pub type Wave = signal::WaveBuffer<f64>;
pub type Spectrogram = signal::ComplexSpectrogram<f64>;
pub type Magnitudes = signal::MagnitudeSpectrogram<f64>;
/// Networks train and store parameters in f32.
pub type Model = nn::AmpModel<f32>;
