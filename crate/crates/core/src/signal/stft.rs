//! Hamming-windowed STFT with reflect padding and weighted overlap-add inverse.
//!
//! Convention: frame `t` is `DFT(w ⊙ x_pad[t·hop .. t·hop + N])` with an
//! unnormalized forward transform, where `x_pad` is the input reflect-padded
//! by `N/2` samples at each end. The inverse divides by `N`, applies the
//! synthesis window and normalizes by the running sum of squared windows,
//! then drops the padding so the output has the source length.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::{Fft, WaveBuffer};
use crate::error::{Error, Result};
use crate::scalar::Real;

const WINDOW_SUM_FLOOR: f64 = 1e-8;

/// Framing parameters. Window length equals the FFT size; hop is half of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    /// 512-point frames (32 ms) with a 256-sample (16 ms) hop at 16 kHz.
    fn default() -> Self {
        Self { fft_size: 512, win_len: 512, hop: 256 }
    }
}

impl StftConfig {
    pub fn with_fft_size(fft_size: usize) -> Result<Self> {
        let cfg = Self { fft_size, win_len: fft_size, hop: fft_size / 2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 4 {
            return Err(Error::InvalidInput(format!("fft_size {} is not a power of two >= 4", self.fft_size)));
        }
        if self.win_len != self.fft_size || self.hop * 2 != self.win_len {
            return Err(Error::InvalidInput(format!(
                "framing requires win_len = fft_size and hop = win_len/2, got {:?}",
                self
            )));
        }
        Ok(())
    }

    /// Retained bins: `fft_size/2 + 1`.
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn pad(&self) -> usize {
        self.win_len / 2
    }

    /// Frame count for a source of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad();
        (padded - self.win_len) / self.hop + 1
    }

    pub fn bin_hz(&self, bin: usize, sample_rate_hz: u32) -> f64 {
        bin as f64 * sample_rate_hz as f64 / self.fft_size as f64
    }

    pub fn window<T: Real>(&self) -> Vec<T> {
        hamming(self.win_len)
    }
}

/// Periodic Hamming window `0.54 − 0.46·cos(2πn/N)`, symmetric under `n → N − n`.
pub fn hamming<T: Real>(n: usize) -> Vec<T> {
    let denom = n.max(1) as f64;
    (0..n)
        .map(|i| T::lit(0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos()))
        .collect()
}

/// Row-major `n_frames × n_bins` grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames<T> {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<T>,
}

/// Nonnegative STFT magnitudes.
pub type MagnitudeSpectrogram<T> = Frames<T>;
/// STFT phases in radians, `(-π, π]`.
pub type PhaseSpectrogram<T> = Frames<T>;

impl<T: Real> Frames<T> {
    pub fn zeros(n_frames: usize, n_bins: usize) -> Self {
        Self { n_frames, n_bins, data: vec![T::zero(); n_frames * n_bins] }
    }

    pub fn from_vec(n_frames: usize, n_bins: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n_frames * n_bins {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {n_frames}×{n_bins} grid",
                data.len()
            )));
        }
        Ok(Self { n_frames, n_bins, data })
    }

    pub fn row(&self, t: usize) -> &[T] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [T] {
        &mut self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.n_bins)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { n_frames: self.n_frames, n_bins: self.n_bins, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Frames<U> {
        Frames { n_frames: self.n_frames, n_bins: self.n_bins, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

/// Complex STFT frames, `n_frames × n_bins`, plus what is needed to invert them.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<T> {
    pub frames: Vec<Complex<T>>,
    pub n_frames: usize,
    pub config: StftConfig,
    pub origin_len: usize,
    pub sample_rate_hz: u32,
}

impl<T: Real> ComplexSpectrogram<T> {
    pub fn n_bins(&self) -> usize {
        self.config.n_bins()
    }

    pub fn frame(&self, t: usize) -> &[Complex<T>] {
        let nb = self.n_bins();
        &self.frames[t * nb..(t + 1) * nb]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex<T>] {
        let nb = self.n_bins();
        &mut self.frames[t * nb..(t + 1) * nb]
    }

    /// Multiply every frame bin-wise by real factors.
    pub fn scale_bins(&mut self, factors: &[T]) {
        assert_eq!(factors.len(), self.n_bins());
        for row in self.frames.chunks_exact_mut(factors.len()) {
            for (c, &g) in row.iter_mut().zip(factors) {
                *c = *c * g;
            }
        }
    }

    pub fn magnitude(&self) -> MagnitudeSpectrogram<T> {
        Frames { n_frames: self.n_frames, n_bins: self.n_bins(), data: self.frames.iter().map(|c| c.norm()).collect() }
    }

    /// Checks frame count and the real-input symmetry of the DC and Nyquist bins.
    pub fn validate(&self) -> Result<()> {
        let nb = self.n_bins();
        if self.frames.len() != self.n_frames * nb {
            return Err(Error::InvalidSpectrogram(format!(
                "{} bins stored for {} frames of {nb}",
                self.frames.len(),
                self.n_frames
            )));
        }
        if self.n_frames != self.config.n_frames(self.origin_len) {
            return Err(Error::InvalidSpectrogram(format!(
                "{} frames cannot describe {} samples",
                self.n_frames, self.origin_len
            )));
        }
        let tol = T::lit(1e-9);
        for (t, row) in self.frames.chunks_exact(nb).enumerate() {
            for &k in &[0, nb - 1] {
                let c = row[k];
                if !c.re.is_finite() || !c.im.is_finite() || c.im.abs() > tol * (T::one() + c.re.abs()) {
                    return Err(Error::InvalidSpectrogram(format!(
                        "bin {k} of frame {t} must be real, found {:?}",
                        c
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Mirror index into `0..len` (reflection without repeating the edge sample).
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

pub fn stft<T: Real>(wave: &WaveBuffer<T>, cfg: &StftConfig) -> Result<ComplexSpectrogram<T>> {
    cfg.validate()?;
    let len = wave.len();
    if len == 0 {
        return Err(Error::TooShort { len: 0, needed: 1 });
    }
    let pad = cfg.pad() as isize;
    let n_frames = cfg.n_frames(len);
    let window: Vec<T> = cfg.window();
    let fft = Fft::new(cfg.fft_size);
    let nb = cfg.n_bins();
    let mut frames = Vec::with_capacity(n_frames * nb);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
    for t in 0..n_frames {
        let start = (t * cfg.hop) as isize - pad;
        for (n, slot) in buf.iter_mut().enumerate() {
            let x = wave.samples[reflect_index(start + n as isize, len)];
            *slot = Complex::new(x * window[n], T::zero());
        }
        fft.forward(&mut buf);
        buf[0].im = T::zero();
        buf[nb - 1].im = T::zero();
        frames.extend_from_slice(&buf[..nb]);
    }
    Ok(ComplexSpectrogram { frames, n_frames, config: *cfg, origin_len: len, sample_rate_hz: wave.sample_rate_hz })
}

/// Weighted overlap-add inverse. The result is hard-clipped to [-1, 1] and the
/// number of clipped samples is recorded on the returned buffer.
pub fn istft<T: Real>(spec: &ComplexSpectrogram<T>) -> Result<WaveBuffer<T>> {
    spec.validate()?;
    let cfg = spec.config;
    let n = cfg.fft_size;
    let nb = cfg.n_bins();
    let pad = cfg.pad();
    let window: Vec<T> = cfg.window();
    let fft = Fft::new(n);
    let total = (spec.n_frames - 1) * cfg.hop + cfg.win_len;
    let mut acc = vec![T::zero(); total];
    let mut norm = vec![T::zero(); total];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for t in 0..spec.n_frames {
        let row = spec.frame(t);
        buf[..nb].copy_from_slice(row);
        buf[0].im = T::zero();
        buf[nb - 1].im = T::zero();
        for k in 1..nb - 1 {
            buf[n - k] = row[k].conj();
        }
        fft.inverse(&mut buf);
        let off = t * cfg.hop;
        for i in 0..n {
            acc[off + i] += buf[i].re * window[i];
            norm[off + i] += window[i] * window[i];
        }
    }
    let mut samples = Vec::with_capacity(spec.origin_len);
    for i in pad..pad + spec.origin_len {
        let w = norm[i];
        if w.as_f64() < WINDOW_SUM_FLOOR {
            return Err(Error::DegenerateWindowSum { index: i - pad, value: w.as_f64() });
        }
        samples.push(acc[i] / w);
    }
    let mut wave = WaveBuffer::new(samples, spec.sample_rate_hz)?;
    wave.clip_in_place();
    Ok(wave)
}

/// Split into magnitude and phase; a zero bin gets phase 0.
pub fn magnitude_phase<T: Real>(spec: &ComplexSpectrogram<T>) -> (MagnitudeSpectrogram<T>, PhaseSpectrogram<T>) {
    let nb = spec.n_bins();
    let mut mag = Vec::with_capacity(spec.frames.len());
    let mut phase = Vec::with_capacity(spec.frames.len());
    for c in &spec.frames {
        mag.push(c.norm());
        phase.push(if c.re == T::zero() && c.im == T::zero() { T::zero() } else { c.im.atan2(c.re) });
    }
    (
        Frames { n_frames: spec.n_frames, n_bins: nb, data: mag },
        Frames { n_frames: spec.n_frames, n_bins: nb, data: phase },
    )
}

/// Rebuild complex frames as `magnitude·e^{i·phase}`. DC and Nyquist bins are
/// projected onto the real axis so the result always satisfies `validate`.
pub fn from_magnitude_phase<T: Real>(
    mag: &MagnitudeSpectrogram<T>,
    phase: &PhaseSpectrogram<T>,
    config: StftConfig,
    origin_len: usize,
    sample_rate_hz: u32,
) -> Result<ComplexSpectrogram<T>> {
    if mag.shape() != phase.shape() || mag.n_bins != config.n_bins() {
        return Err(Error::ShapeMismatch(format!(
            "magnitude {:?} vs phase {:?} for {} bins",
            mag.shape(),
            phase.shape(),
            config.n_bins()
        )));
    }
    let nb = mag.n_bins;
    let frames = mag
        .data
        .iter()
        .zip(&phase.data)
        .enumerate()
        .map(|(i, (&m, &p))| {
            let k = i % nb;
            if k == 0 || k == nb - 1 {
                Complex::new(m * p.cos().signum(), T::zero())
            } else {
                Complex::from_polar(m, p)
            }
        })
        .collect();
    let spec = ComplexSpectrogram { frames, n_frames: mag.n_frames, config, origin_len, sample_rate_hz };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> WaveBuffer<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WaveBuffer::from_samples((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
    }

    #[test]
    fn reflect_index_mirrors() {
        let got: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn frame_count_formula() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.n_frames(16000), 16000 / 256 + 1);
        assert_eq!(cfg.n_frames(200), 1);
        assert_eq!(stft(&noise(1000, 1), &cfg).unwrap().n_frames, 4);
    }

    #[test]
    fn window_symmetric_positive() {
        let w: Vec<f64> = hamming(512);
        assert!(w.iter().all(|&v| v > 0.0));
        for i in 1..256 {
            assert!((w[i] - w[512 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let w = WaveBuffer::from_samples(vec![0.0f64; 3000]).unwrap();
        let s = stft(&w, &StftConfig::default()).unwrap();
        assert!(s.frames.iter().all(|c| c.norm() == 0.0));
        let back = istft(&s).unwrap();
        assert!(back.samples.iter().all(|&v| v == 0.0));
        assert_eq!(back.len(), 3000);
    }

    #[test]
    fn nonreal_dc_rejected() {
        let mut s = stft(&noise(2000, 2), &StftConfig::default()).unwrap();
        s.frames[0].im = 0.25;
        assert!(matches!(istft(&s), Err(Error::InvalidSpectrogram(_))));
    }

    #[test]
    fn empty_wave_too_short() {
        let w = WaveBuffer::<f64>::from_samples(vec![]).unwrap();
        assert!(matches!(stft(&w, &StftConfig::default()), Err(Error::TooShort { .. })));
    }

    #[test]
    fn polar_split_examples() {
        let cfg = StftConfig::with_fft_size(4).unwrap();
        let spec = ComplexSpectrogram {
            frames: vec![Complex::new(1.0, 0.0), Complex::new(3.0, 4.0), Complex::new(0.0, 0.0)],
            n_frames: 1,
            config: cfg,
            origin_len: 1,
            sample_rate_hz: 16000,
        };
        let (m, p) = magnitude_phase(&spec);
        assert_eq!(m.data[1], 5.0);
        assert_eq!(p.data[1], 4f64.atan2(3.0));
        assert_eq!((m.data[2], p.data[2]), (0.0, 0.0));
    }

    #[test]
    fn polar_round_trip() {
        let spec = stft(&noise(4000, 9), &StftConfig::default()).unwrap();
        let (m, p) = magnitude_phase(&spec);
        let back = from_magnitude_phase(&m, &p, spec.config, spec.origin_len, 16000).unwrap();
        for (a, b) in spec.frames.iter().zip(&back.frames) {
            assert!((a - b).norm() <= 1e-6 * a.norm().max(1e-12));
        }
    }

    #[test]
    fn round_trip_length_and_accuracy() {
        for &len in &[1usize, 100, 257, 511, 513, 1601] {
            let x = noise(len, len as u64);
            let y = istft(&stft(&x, &StftConfig::default()).unwrap()).unwrap();
            assert_eq!(y.len(), len);
            for (a, b) in x.samples.iter().zip(&y.samples) {
                assert!((a - b).abs() < 1e-12, "len {len}");
            }
        }
    }
}
