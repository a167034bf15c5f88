//! Waveform and time-frequency plumbing shared by every other module.

mod fft;
mod stft;
mod wav;

pub use fft::Fft;
pub use stft::{
    from_magnitude_phase, hamming, istft, magnitude_phase, stft, ComplexSpectrogram, Frames,
    MagnitudeSpectrogram, PhaseSpectrogram, StftConfig,
};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Floor applied to RMS before conversion to dB.
pub const RMS_FLOOR: f64 = 1e-10;

/// Mono PCM waveform in nominal full-scale units.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveBuffer<T> {
    pub samples: Vec<T>,
    pub sample_rate_hz: u32,
    /// Samples hard-clipped to [-1, 1] when this buffer was synthesized.
    pub clipped: usize,
}

impl<T: Real> WaveBuffer<T> {
    /// Build a buffer, rejecting non-finite samples.
    pub fn new(samples: Vec<T>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Self { samples, sample_rate_hz, clipped: 0 })
    }

    /// 16 kHz buffer.
    pub fn from_samples(samples: Vec<T>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE_HZ)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Rejects anything other than the canonical 16 kHz rate.
    pub fn ensure_pipeline_rate(&self) -> Result<()> {
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::UnsupportedEncoding(format!(
                "sample rate {} Hz (pipeline requires {} Hz)",
                self.sample_rate_hz, SAMPLE_RATE_HZ
            )));
        }
        Ok(())
    }

    /// Hard clip to [-1, 1], adding the number of touched samples to `clipped`.
    pub fn clip_in_place(&mut self) -> usize {
        let one = T::one();
        let mut n = 0;
        for s in &mut self.samples {
            if *s > one {
                *s = one;
                n += 1;
            } else if *s < -one {
                *s = -one;
                n += 1;
            }
        }
        self.clipped += n;
        n
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let ss: f64 = self.samples.iter().map(|s| s.as_f64() * s.as_f64()).sum();
        (ss / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.as_f64().abs()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            samples: self.samples.iter().map(|&s| f(s)).collect(),
            sample_rate_hz: self.sample_rate_hz,
            clipped: self.clipped,
        }
    }

    pub fn cast<U: Real>(&self) -> WaveBuffer<U> {
        WaveBuffer {
            samples: self.samples.iter().map(|s| U::lit(s.as_f64())).collect(),
            sample_rate_hz: self.sample_rate_hz,
            clipped: self.clipped,
        }
    }
}

/// Level in dBFS: `20·log10(max(RMS, 1e-10))`.
pub fn rms_db<T: Real>(wave: &WaveBuffer<T>) -> f64 {
    20.0 * wave.rms().max(RMS_FLOOR).log10()
}

/// Linear amplitude factor for a dB value.
#[inline]
pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}
