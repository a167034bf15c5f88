//! Multiband wide dynamic range compression on STFT frames.
//!
//! Bins are grouped into six bands bracketing the audiometric frequencies.
//! Each band's level is estimated per frame, smoothed with attack/release
//! one-pole filters, mapped through a static downward-compression curve, and
//! the resulting band gains are interpolated back to individual bins.
//!
//! Level calibration: band power is `Σ|X_k|² / (N·Σw²/4)`, which is 1 for a
//! full-scale sine, so a full-scale sine reads `calib_spl_at_0_dbfs`.

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::prescription::{interpolate_db_over_bins, nalr_gains, Audiogram, GainCurve, AUDIOGRAM_FREQS_HZ};
use crate::scalar::Real;
use crate::signal::{istft, stft, ComplexSpectrogram, Frames, MagnitudeSpectrogram, StftConfig, WaveBuffer};

pub const N_BANDS: usize = 6;
/// Lower bound on estimated band levels.
pub const LEVEL_FLOOR_DB_SPL: f64 = -60.0;

fn per_band<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v; N_BANDS],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressorConfig {
    pub band_edges_hz: Vec<f64>,
    #[serde(deserialize_with = "per_band")]
    pub kneepoint_db_spl: Vec<f64>,
    #[serde(deserialize_with = "per_band")]
    pub ratio: Vec<f64>,
    pub attack_ms: f64,
    pub release_ms: f64,
    pub calib_spl_at_0_dbfs: f64,
}

impl Default for CompressorConfig {
    fn default() -> Self {
        Self {
            band_edges_hz: vec![0.0, 354.0, 707.0, 1414.0, 2828.0, 4899.0, 8000.0],
            kneepoint_db_spl: vec![45.0; N_BANDS],
            ratio: vec![3.0; N_BANDS],
            attack_ms: 5.0,
            release_ms: 50.0,
            calib_spl_at_0_dbfs: 100.0,
        }
    }
}

impl CompressorConfig {
    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("compressor config: {m}")));
        let e = &self.band_edges_hz;
        if e.len() != N_BANDS + 1 {
            return bad(format!("{} band edges, need {}", e.len(), N_BANDS + 1));
        }
        if e[0] != 0.0 || e[N_BANDS] != sample_rate_hz as f64 / 2.0 {
            return bad(format!("band edges must span 0..{} Hz", sample_rate_hz / 2));
        }
        if e.windows(2).any(|w| w[1] <= w[0]) {
            return bad("band edges must be strictly ascending".into());
        }
        if self.kneepoint_db_spl.len() != N_BANDS || self.ratio.len() != N_BANDS {
            return bad(format!("kneepoint and ratio need {N_BANDS} values"));
        }
        if self.ratio.iter().any(|&r| !(r >= 1.0)) {
            return bad("ratio must be >= 1".into());
        }
        if !(self.attack_ms > 0.0 && self.release_ms > 0.0) {
            return bad("attack_ms and release_ms must be positive".into());
        }
        if self.kneepoint_db_spl.iter().chain([&self.calib_spl_at_0_dbfs]).any(|v| !v.is_finite()) {
            return bad("kneepoints and calibration must be finite".into());
        }
        Ok(())
    }

    /// Band index of every STFT bin.
    pub fn bin_bands(&self, stft_cfg: &StftConfig, sample_rate_hz: u32) -> Vec<usize> {
        (0..stft_cfg.n_bins())
            .map(|k| {
                let f = stft_cfg.bin_hz(k, sample_rate_hz);
                let b = self.band_edges_hz.partition_point(|&e| e <= f);
                b.clamp(1, N_BANDS) - 1
            })
            .collect()
    }

    /// One-pole smoothing coefficient `exp(−hop/τ)`.
    pub fn coefficient(tau_ms: f64, stft_cfg: &StftConfig, sample_rate_hz: u32) -> f64 {
        let hop_ms = 1000.0 * stft_cfg.hop as f64 / sample_rate_hz as f64;
        (-hop_ms / tau_ms).exp()
    }

    /// Static curve: 0 dB below the knee, `−(L − K)(1 − 1/ratio)` above.
    pub fn static_gain_db(&self, band: usize, level_db_spl: f64) -> f64 {
        let k = self.kneepoint_db_spl[band];
        if level_db_spl <= k {
            0.0
        } else {
            -(level_db_spl - k) * (1.0 - 1.0 / self.ratio[band])
        }
    }
}

/// Smoothed per-frame band levels in dB SPL, `T × 6`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLevelTrack {
    pub levels_db_spl: Frames<f64>,
}

/// Unsmoothed per-frame band levels (dB SPL, floored).
pub fn instantaneous_band_levels<T: Real>(
    mag: &MagnitudeSpectrogram<T>,
    cfg: &CompressorConfig,
    stft_cfg: &StftConfig,
    sample_rate_hz: u32,
) -> Result<Frames<f64>> {
    cfg.validate(sample_rate_hz)?;
    if mag.n_bins != stft_cfg.n_bins() {
        return Err(Error::ShapeMismatch(format!("{} bins, STFT config has {}", mag.n_bins, stft_cfg.n_bins())));
    }
    let bands = cfg.bin_bands(stft_cfg, sample_rate_hz);
    let window: Vec<f64> = stft_cfg.window();
    let norm = stft_cfg.fft_size as f64 * window.iter().map(|w| w * w).sum::<f64>() / 4.0;
    let mut out = Frames::zeros(mag.n_frames, N_BANDS);
    for t in 0..mag.n_frames {
        let mut power = [0.0f64; N_BANDS];
        for (m, &b) in mag.row(t).iter().zip(&bands) {
            let m = m.as_f64();
            power[b] += m * m;
        }
        for (o, p) in out.row_mut(t).iter_mut().zip(power) {
            *o = (cfg.calib_spl_at_0_dbfs + 10.0 * (p / norm).max(1e-300).log10()).max(LEVEL_FLOOR_DB_SPL);
        }
    }
    Ok(out)
}

/// Attack/release smoothing in the dB domain, seeded with the first frame.
pub fn smooth_levels(inst: &Frames<f64>, alpha_attack: f64, alpha_release: f64) -> Frames<f64> {
    let mut out = inst.clone();
    for b in 0..inst.n_bins {
        let mut state = match inst.n_frames {
            0 => continue,
            _ => inst.data[b],
        };
        for t in 0..inst.n_frames {
            let x = inst.data[t * inst.n_bins + b];
            let a = if x > state { alpha_attack } else { alpha_release };
            state = a * state + (1.0 - a) * x;
            out.data[t * inst.n_bins + b] = state;
        }
    }
    out
}

pub fn band_levels<T: Real>(
    mag: &MagnitudeSpectrogram<T>,
    cfg: &CompressorConfig,
    stft_cfg: &StftConfig,
    sample_rate_hz: u32,
) -> Result<BandLevelTrack> {
    let inst = instantaneous_band_levels(mag, cfg, stft_cfg, sample_rate_hz)?;
    let aa = CompressorConfig::coefficient(cfg.attack_ms, stft_cfg, sample_rate_hz);
    let ar = CompressorConfig::coefficient(cfg.release_ms, stft_cfg, sample_rate_hz);
    Ok(BandLevelTrack { levels_db_spl: smooth_levels(&inst, aa, ar) })
}

/// Compression gain (dB, ≤ 0) per frame and band.
pub fn band_gains(levels: &BandLevelTrack, cfg: &CompressorConfig) -> Frames<f64> {
    let l = &levels.levels_db_spl;
    let mut out = Frames::zeros(l.n_frames, l.n_bins);
    for t in 0..l.n_frames {
        for b in 0..l.n_bins {
            out.data[t * l.n_bins + b] = cfg.static_gain_db(b, l.data[t * l.n_bins + b]);
        }
    }
    out
}

/// Apply compression in place to an STFT; returns the per-frame band gains used.
pub fn compress_spectrogram<T: Real>(spec: &mut ComplexSpectrogram<T>, cfg: &CompressorConfig) -> Result<Frames<f64>> {
    let fs = spec.sample_rate_hz;
    let levels = band_levels(&spec.magnitude(), cfg, &spec.config, fs)?;
    let gains = band_gains(&levels, cfg);
    let nb = spec.n_bins();
    for t in 0..spec.n_frames {
        let per_bin = interpolate_db_over_bins(&AUDIOGRAM_FREQS_HZ, gains.row(t), nb, fs);
        for (c, db) in spec.frame_mut(t).iter_mut().zip(per_bin) {
            *c = *c * T::lit(10f64.powf(db / 20.0));
        }
    }
    Ok(gains)
}

/// Output of the reference amplifier.
#[derive(Debug, Clone)]
pub struct Amplified<T> {
    pub wave: WaveBuffer<T>,
    /// STFT magnitudes of `wave` (the network training target).
    pub magnitudes: MagnitudeSpectrogram<T>,
    /// Magnitudes of the modified STFT before resynthesis.
    pub modified_magnitudes: MagnitudeSpectrogram<T>,
    /// Compression gains in dB actually applied, `T × 6`.
    pub band_gains_db: Frames<f64>,
}

/// Insertion gain followed by compression, for an explicit gain curve.
pub fn amplify_with_gains<T: Real>(
    wave: &WaveBuffer<T>,
    gains: &GainCurve,
    cfg: &CompressorConfig,
    stft_cfg: &StftConfig,
) -> Result<Amplified<T>> {
    wave.ensure_pipeline_rate()?;
    let mut spec = stft(wave, stft_cfg)?;
    let linear = crate::prescription::interpolate_gains::<T>(gains, stft_cfg.n_bins(), wave.sample_rate_hz);
    spec.scale_bins(&linear);
    let band_gains_db = compress_spectrogram(&mut spec, cfg)?;
    let modified_magnitudes = spec.magnitude();
    let wave = istft(&spec)?;
    // the modified STFT is generally not the STFT of any signal; report the
    // magnitudes the output waveform actually has
    let magnitudes = stft(&wave, stft_cfg)?.magnitude();
    Ok(Amplified { wave, magnitudes, modified_magnitudes, band_gains_db })
}

/// The NAL-R + WDRC reference amplifier.
pub fn amplify_reference<T: Real>(
    wave: &WaveBuffer<T>,
    audiogram: &Audiogram,
    cfg: &CompressorConfig,
    stft_cfg: &StftConfig,
) -> Result<Amplified<T>> {
    amplify_with_gains(wave, &nalr_gains(audiogram), cfg, stft_cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Frames, WaveBuffer};

    #[test]
    fn static_curve_examples() {
        let cfg = CompressorConfig::default();
        assert_eq!(cfg.static_gain_db(0, 40.0), 0.0);
        assert!((cfg.static_gain_db(0, 65.0) + 13.333_333_333).abs() < 1e-6);
        let unity = CompressorConfig { ratio: vec![1.0; 6], ..CompressorConfig::default() };
        assert!((0..100).all(|l| unity.static_gain_db(2, l as f64) == 0.0));
    }

    #[test]
    fn default_bins_partition() {
        let cfg = CompressorConfig::default();
        let bands = cfg.bin_bands(&StftConfig::default(), 16000);
        assert_eq!(bands[0], 0);
        assert_eq!(bands[256], 5);
        assert_eq!(bands[16], 1);
        assert_eq!(bands[32], 2);
        assert!(bands.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn config_validation() {
        let cfg = CompressorConfig::default();
        assert!(cfg.validate(16000).is_ok());
        let mut bad = cfg.clone();
        bad.ratio[2] = 0.5;
        assert!(bad.validate(16000).is_err());
        let mut bad = cfg.clone();
        bad.band_edges_hz.swap(2, 3);
        assert!(bad.validate(16000).is_err());
        let bad = CompressorConfig { attack_ms: 0.0, ..cfg };
        assert!(bad.validate(16000).is_err());
    }

    #[test]
    fn json_defaults_and_scalar_broadcast() {
        let cfg: CompressorConfig = serde_json::from_str(r#"{"ratio": 2.0, "release_ms": 80}"#).unwrap();
        assert_eq!(cfg.ratio, vec![2.0; 6]);
        assert_eq!(cfg.release_ms, 80.0);
        assert_eq!(cfg.kneepoint_db_spl, vec![45.0; 6]);
        assert!(serde_json::from_str::<CompressorConfig>(r#"{"knee": 1}"#).is_err());
    }

    #[test]
    fn silence_levels_floor() {
        let mag = Frames::<f64>::zeros(5, 257);
        let l = band_levels(&mag, &CompressorConfig::default(), &StftConfig::default(), 16000).unwrap();
        assert!(l.levels_db_spl.data.iter().all(|&v| v == LEVEL_FLOOR_DB_SPL));
    }

    #[test]
    fn full_scale_sine_reads_calibration() {
        let w = WaveBuffer::from_samples((0..8000).map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin()).collect::<Vec<f64>>()).unwrap();
        let spec = stft(&w, &StftConfig::default()).unwrap();
        let inst = instantaneous_band_levels(&spec.magnitude(), &CompressorConfig::default(), &StftConfig::default(), 16000).unwrap();
        assert!((inst.row(10)[2] - 100.0).abs() < 0.01, "{}", inst.row(10)[2]);
    }

    #[test]
    fn attack_time_constant() {
        // 160 ms attack = 10 hops; a level step should cover 63% after 10 frames
        let stft_cfg = StftConfig::default();
        let a = CompressorConfig::coefficient(160.0, &stft_cfg, 16000);
        let mut inst = Frames::zeros(30, 1);
        for t in 0..30 {
            inst.data[t] = if t < 5 { 40.0 } else { 60.0 };
        }
        let s = smooth_levels(&inst, a, 0.5);
        let frac = (s.data[14] - 40.0) / 20.0;
        assert!((frac - (1.0 - (-1.0f64).exp())).abs() < 1e-9, "{frac}");
    }

    #[test]
    fn zero_time_constants_pass_through() {
        let mut inst = Frames::zeros(6, 2);
        inst.data = vec![1.0, 5.0, 9.0, -3.0, 2.0, 2.0, 7.0, 0.0, 4.0, 4.0, 1.0, 8.0];
        let a = CompressorConfig::coefficient(1e-9, &StftConfig::default(), 16000);
        assert_eq!(smooth_levels(&inst, a, a), inst);
    }
}
