//! Audiograms, synthetic hearing-loss patterns and the NAL-R linear
//! insertion-gain prescription.
//!
//! NAL-R (Byrne & Dillon) constants used here:
//!
//! | Hz    | 250 | 500 | 1000 | 2000 | 4000 | 6000 |
//! |-------|-----|-----|------|------|------|------|
//! | C(f)  | −17 | −8  | +1   | −1   | −2   | −2   |
//!
//! `gain(f) = 0.05·(H500 + H1000 + H2000) + 0.31·H(f) + C(f)`, clamped at 0 dB.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::{istft, stft, StftConfig, WaveBuffer};

/// Audiometric test frequencies, ascending.
pub const AUDIOGRAM_FREQS_HZ: [f64; 6] = [250.0, 500.0, 1000.0, 2000.0, 4000.0, 6000.0];

/// NAL-R frequency-specific correction, aligned with [`AUDIOGRAM_FREQS_HZ`].
pub const NALR_CORRECTION_DB: [f64; 6] = [-17.0, -8.0, 1.0, -1.0, -2.0, -2.0];

pub const MAX_THRESHOLD_DB_HL: f64 = 120.0;
pub const MAX_GAIN_DB: f64 = 80.0;

/// Hearing thresholds in dB HL at [`AUDIOGRAM_FREQS_HZ`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AudiogramRecord", into = "AudiogramRecord")]
pub struct Audiogram {
    id: String,
    thresholds: [f64; 6],
}

#[derive(Serialize, Deserialize)]
struct AudiogramRecord {
    id: String,
    thresholds_db_hl: Vec<f64>,
}

impl TryFrom<AudiogramRecord> for Audiogram {
    type Error = Error;

    fn try_from(r: AudiogramRecord) -> Result<Self> {
        let t: [f64; 6] = r.thresholds_db_hl.as_slice().try_into().map_err(|_| {
            Error::InvalidInput(format!("audiogram `{}` needs 6 thresholds, got {}", r.id, r.thresholds_db_hl.len()))
        })?;
        Audiogram::new(r.id, t)
    }
}

impl From<Audiogram> for AudiogramRecord {
    fn from(a: Audiogram) -> Self {
        AudiogramRecord { id: a.id, thresholds_db_hl: a.thresholds.to_vec() }
    }
}

impl Audiogram {
    pub fn new(id: impl Into<String>, thresholds_db_hl: [f64; 6]) -> Result<Self> {
        let id = id.into();
        for (t, f) in thresholds_db_hl.iter().zip(AUDIOGRAM_FREQS_HZ) {
            if !(0.0..=MAX_THRESHOLD_DB_HL).contains(t) {
                return Err(Error::InvalidInput(format!(
                    "audiogram `{id}`: threshold {t} dB HL at {f} Hz outside [0, {MAX_THRESHOLD_DB_HL}]"
                )));
            }
        }
        Ok(Self { id, thresholds: thresholds_db_hl })
    }

    pub fn flat(id: impl Into<String>, level_db_hl: f64) -> Result<Self> {
        Self::new(id, [level_db_hl; 6])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn thresholds_db_hl(&self) -> &[f64; 6] {
        &self.thresholds
    }

    /// Pure-tone average over 500, 1000 and 2000 Hz.
    pub fn pta(&self) -> f64 {
        (self.thresholds[1] + self.thresholds[2] + self.thresholds[3]) / 3.0
    }
}

/// Load one audiogram object or an array of them.
pub fn load_audiograms(path: impl AsRef<Path>) -> Result<Vec<Audiogram>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.is_array() {
        Ok(serde_json::from_value(value)?)
    } else {
        Ok(vec![serde_json::from_value(value)?])
    }
}

/// Insertion gains in dB at [`AUDIOGRAM_FREQS_HZ`], each in `[0, 80]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainCurve {
    pub gains_db: [f64; 6],
}

impl GainCurve {
    /// Clamps each gain into `[0, MAX_GAIN_DB]`.
    pub fn clamped(raw_db: [f64; 6]) -> Self {
        Self { gains_db: raw_db.map(|g| g.clamp(0.0, MAX_GAIN_DB)) }
    }

    pub fn zero() -> Self {
        Self { gains_db: [0.0; 6] }
    }

    pub fn flat(db: f64) -> Self {
        Self::clamped([db; 6])
    }
}

/// Unclamped NAL-R gains.
pub fn nalr_raw_gains(a: &Audiogram) -> [f64; 6] {
    let h = a.thresholds_db_hl();
    let x = 0.05 * (h[1] + h[2] + h[3]);
    std::array::from_fn(|i| x + 0.31 * h[i] + NALR_CORRECTION_DB[i])
}

pub fn nalr_gains(a: &Audiogram) -> GainCurve {
    GainCurve::clamped(nalr_raw_gains(a))
}

/// Piecewise-linear interpolation over log-frequency of dB values anchored at
/// `anchors_hz`, evaluated at every STFT bin. Values hold flat outside the
/// anchor range.
pub fn interpolate_db_over_bins(anchors_hz: &[f64], values_db: &[f64], n_bins: usize, sample_rate_hz: u32) -> Vec<f64> {
    assert_eq!(anchors_hz.len(), values_db.len());
    assert!(!anchors_hz.is_empty());
    let fft_size = 2 * (n_bins - 1);
    let last = anchors_hz.len() - 1;
    (0..n_bins)
        .map(|k| {
            let f = k as f64 * sample_rate_hz as f64 / fft_size as f64;
            if f <= anchors_hz[0] {
                return values_db[0];
            }
            if f >= anchors_hz[last] {
                return values_db[last];
            }
            let i = anchors_hz.partition_point(|&a| a <= f) - 1;
            let frac = (f / anchors_hz[i]).ln() / (anchors_hz[i + 1] / anchors_hz[i]).ln();
            values_db[i] + frac * (values_db[i + 1] - values_db[i])
        })
        .collect()
}

/// Per-bin linear gain factors `10^(dB/20)` from a gain curve.
pub fn interpolate_gains<T: Real>(g: &GainCurve, n_bins: usize, sample_rate_hz: u32) -> Vec<T> {
    interpolate_db_over_bins(&AUDIOGRAM_FREQS_HZ, &g.gains_db, n_bins, sample_rate_hz)
        .into_iter()
        .map(|db| T::lit(10f64.powf(db / 20.0)))
        .collect()
}

/// Linear (NAL-R only) amplification: scale STFT bins and resynthesize.
pub fn apply_linear_gain<T: Real>(wave: &WaveBuffer<T>, g: &GainCurve, cfg: &StftConfig) -> Result<WaveBuffer<T>> {
    wave.ensure_pipeline_rate()?;
    let mut spec = stft(wave, cfg)?;
    let factors = interpolate_gains::<T>(g, cfg.n_bins(), wave.sample_rate_hz);
    spec.scale_bins(&factors);
    istft(&spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossShape {
    Flat,
    GentlySloping,
    SteeplySloping,
    Rising,
    Notched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Mild,
    Moderate,
    ModeratelySevere,
    Severe,
}

impl Severity {
    /// Pure-tone-average band in dB HL.
    pub fn pta_band(self) -> (f64, f64) {
        match self {
            Severity::Mild => (26.0, 40.0),
            Severity::Moderate => (41.0, 55.0),
            Severity::ModeratelySevere => (56.0, 70.0),
            Severity::Severe => (71.0, 90.0),
        }
    }
}

impl LossShape {
    pub const ALL: [LossShape; 5] =
        [LossShape::Flat, LossShape::GentlySloping, LossShape::SteeplySloping, LossShape::Rising, LossShape::Notched];

    /// Template offsets (dB) relative to the base level at each audiogram frequency.
    pub fn offsets_db(self) -> [f64; 6] {
        AUDIOGRAM_FREQS_HZ.map(|f| match self {
            LossShape::Flat => 0.0,
            LossShape::GentlySloping => 5.0 * (f / 1000.0).log2().max(0.0),
            LossShape::SteeplySloping => 15.0 * (f / 1000.0).log2().max(0.0),
            LossShape::Rising => -5.0 * (f / 250.0).log2(),
            LossShape::Notched => {
                if f == 4000.0 {
                    25.0
                } else {
                    0.0
                }
            }
        })
    }
}

impl Severity {
    pub const ALL: [Severity; 4] = [Severity::Mild, Severity::Moderate, Severity::ModeratelySevere, Severity::Severe];
}

impl fmt::Display for LossShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossShape::Flat => "flat",
            LossShape::GentlySloping => "gently_sloping",
            LossShape::SteeplySloping => "steeply_sloping",
            LossShape::Rising => "rising",
            LossShape::Notched => "notched",
        })
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::ModeratelySevere => "moderately_severe",
            Severity::Severe => "severe",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HearingLossPattern {
    pub shape: LossShape,
    pub severity: Severity,
    pub jitter_db: f64,
}

/// Template audiogram before jitter: the base level is drawn so that the PTA
/// falls inside the severity band while every threshold stays in `[0, 120]`.
fn template_thresholds(p: &HearingLossPattern, rng: &mut ChaCha8Rng) -> [f64; 6] {
    let offsets = p.shape.offsets_db();
    let pta_offset = (offsets[1] + offsets[2] + offsets[3]) / 3.0;
    let (lo_band, hi_band) = p.severity.pta_band();
    let max_off = offsets.iter().cloned().fold(f64::MIN, f64::max);
    let min_off = offsets.iter().cloned().fold(f64::MAX, f64::min);
    // PTA range that keeps base + offset inside the audiometric domain
    let lo = lo_band.max(pta_offset - min_off);
    let hi = hi_band.min(MAX_THRESHOLD_DB_HL - max_off + pta_offset);
    let pta = if lo < hi { rng.gen_range(lo..=hi) } else { lo_band.max(lo.min(hi_band)) };
    let base = pta - pta_offset;
    offsets.map(|o| base + o)
}

pub fn generate_audiogram(p: &HearingLossPattern, seed: u64) -> Result<Audiogram> {
    if !(p.jitter_db >= 0.0 && p.jitter_db.is_finite()) {
        return Err(Error::InvalidInput(format!("jitter_db must be a nonnegative real, got {}", p.jitter_db)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = template_thresholds(p, &mut rng);
    let mut out = [0.0; 6];
    for (o, t) in out.iter_mut().zip(template) {
        let j = if p.jitter_db > 0.0 { rng.gen_range(-p.jitter_db..=p.jitter_db) } else { 0.0 };
        *o = (t + j).clamp(0.0, MAX_THRESHOLD_DB_HL);
    }
    Audiogram::new(format!("{}-{}-{}", p.shape, p.severity, seed), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nalr_flat_zero() {
        assert_eq!(nalr_gains(&Audiogram::flat("a", 0.0).unwrap()).gains_db, [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn nalr_flat_forty() {
        let raw = nalr_raw_gains(&Audiogram::flat("a", 40.0).unwrap());
        let want = [1.4, 10.4, 19.4, 17.4, 16.4, 16.4];
        for (g, w) in raw.iter().zip(want) {
            assert!((g - w).abs() < 1e-9);
        }
    }

    #[test]
    fn nalr_sloping_4k() {
        let a = Audiogram::new("s", [20.0, 25.0, 35.0, 50.0, 65.0, 70.0]).unwrap();
        assert!((nalr_gains(&a).gains_db[4] - 23.65).abs() < 1e-9);
    }

    #[test]
    fn audiogram_domain_enforced() {
        assert!(Audiogram::new("x", [0.0, 0.0, 0.0, 0.0, 0.0, 121.0]).is_err());
        assert!(Audiogram::new("x", [-1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        let bad = r#"{"id":"x","thresholds_db_hl":[1,2,3]}"#;
        assert!(serde_json::from_str::<Audiogram>(bad).is_err());
    }

    #[test]
    fn audiogram_json_shape() {
        let a = Audiogram::new("p1", [10.0, 20.0, 30.0, 40.0, 50.0, 60.0]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"id":"p1","thresholds_db_hl":[10.0,20.0,30.0,40.0,50.0,60.0]}"#);
        assert_eq!(serde_json::from_str::<Audiogram>(&s).unwrap(), a);
    }

    #[test]
    fn interpolation_unit_and_constant() {
        let ones: Vec<f64> = interpolate_gains(&GainCurve::zero(), 257, 16000);
        assert!(ones.iter().all(|&g| g == 1.0));
        let tens: Vec<f64> = interpolate_gains(&GainCurve::flat(20.0), 257, 16000);
        assert!(tens.iter().all(|&g| (g - 10.0).abs() < 1e-12));
    }

    #[test]
    fn interpolation_geometric_midpoint() {
        let g = GainCurve::clamped([0.0, 0.0, 0.0, 0.0, 0.0, 12.0]);
        let db = interpolate_db_over_bins(&AUDIOGRAM_FREQS_HZ, &g.gains_db, 257, 16000);
        let mid_hz = (4000.0f64 * 6000.0).sqrt();
        let bin = (mid_hz / 31.25).round() as usize;
        assert!((db[bin] - 6.0).abs() < 0.1, "{}", db[bin]);
    }

    #[test]
    fn interpolation_exact_at_anchor_bins() {
        let g = GainCurve::clamped([3.0, 9.0, 14.0, 22.0, 30.0, 35.0]);
        let db = interpolate_db_over_bins(&AUDIOGRAM_FREQS_HZ, &g.gains_db, 257, 16000);
        for (f, want) in AUDIOGRAM_FREQS_HZ.iter().zip(g.gains_db) {
            let bin = (f / 31.25).round() as usize;
            assert!((db[bin] - want).abs() < 1e-9);
        }
        // holds outside the anchor range
        assert_eq!(db[0], 3.0);
        assert_eq!(db[256], 35.0);
    }

    #[test]
    fn generator_flat_mild() {
        let p = HearingLossPattern { shape: LossShape::Flat, severity: Severity::Mild, jitter_db: 0.0 };
        for seed in 0..20 {
            let a = generate_audiogram(&p, seed).unwrap();
            let t = a.thresholds_db_hl();
            assert!(t.iter().all(|&v| v == t[0]));
            assert!((26.0..=40.0).contains(&t[0]));
        }
    }

    #[test]
    fn generator_steep_severe_slope() {
        let p = HearingLossPattern { shape: LossShape::SteeplySloping, severity: Severity::Severe, jitter_db: 0.0 };
        for seed in 0..20 {
            let t = *generate_audiogram(&p, seed).unwrap().thresholds_db_hl();
            assert!((t[5] - t[2] - 15.0 * 6f64.log2()).abs() <= 1.0);
        }
    }

    #[test]
    fn generator_deterministic() {
        let p = HearingLossPattern { shape: LossShape::Notched, severity: Severity::Moderate, jitter_db: 4.0 };
        assert_eq!(generate_audiogram(&p, 7).unwrap(), generate_audiogram(&p, 7).unwrap());
        assert_ne!(generate_audiogram(&p, 7).unwrap(), generate_audiogram(&p, 8).unwrap());
    }

    proptest! {
        #[test]
        fn nalr_monotone_in_each_threshold(
            base in proptest::array::uniform6(0.0f64..120.0),
            idx in 0usize..6,
            bump in 0.0f64..40.0,
        ) {
            let mut raised = base;
            raised[idx] = (raised[idx] + bump).min(120.0);
            let lo = nalr_gains(&Audiogram::new("a", base).unwrap());
            let hi = nalr_gains(&Audiogram::new("b", raised).unwrap());
            for i in 0..6 {
                prop_assert!(hi.gains_db[i] >= lo.gains_db[i]);
                prop_assert!(lo.gains_db[i] >= 0.0);
            }
        }

        #[test]
        fn generator_pta_in_band_before_jitter(seed in any::<u64>(), s in 0usize..5, v in 0usize..4) {
            let p = HearingLossPattern { shape: LossShape::ALL[s], severity: Severity::ALL[v], jitter_db: 0.0 };
            let a = generate_audiogram(&p, seed).unwrap();
            let (lo, hi) = p.severity.pta_band();
            prop_assert!(a.pta() >= lo - 1e-9 && a.pta() <= hi + 1e-9);
        }
    }
}
