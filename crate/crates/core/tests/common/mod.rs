#![allow(dead_code)]

use std::f64::consts::PI;

use neuroamp::signal::WaveBuffer;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FS: f64 = 16000.0;

pub fn tone(freq_hz: f64, amp: f64, len: usize) -> WaveBuffer<f64> {
    WaveBuffer::from_samples((0..len).map(|i| amp * (2.0 * PI * freq_hz * i as f64 / FS).sin()).collect()).unwrap()
}

pub fn white(len: usize, amp: f64, seed: u64) -> WaveBuffer<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    WaveBuffer::from_samples((0..len).map(|_| rng.gen_range(-amp..amp)).collect()).unwrap()
}

/// Amplitude giving a sine the requested level when 0 dBFS ≡ `calib` dB SPL.
pub fn amp_for_spl(spl: f64, calib: f64) -> f64 {
    10f64.powf((spl - calib) / 20.0)
}

/// Direct O(N²) DFT of a real frame, bins `0..=N/2`.
pub fn naive_rdft(x: &[f64]) -> Vec<Complex<f64>> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (t, &v)| {
                let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                acc + Complex::new(v * ang.cos(), v * ang.sin())
            })
        })
        .collect()
}

/// Reflect-padded, windowed frame `t` built independently of the library.
pub fn oracle_frame(x: &[f64], t: usize, n: usize, hop: usize) -> Vec<f64> {
    let pad = (n / 2) as isize;
    let len = x.len() as isize;
    (0..n)
        .map(|i| {
            let mut j = (t * hop) as isize + i as isize - pad;
            while j < 0 || j >= len {
                j = if j < 0 { -j } else { 2 * (len - 1) - j };
            }
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / n as f64).cos();
            x[j as usize] * w
        })
        .collect()
}

pub fn snr_db(reference: &[f64], test: &[f64]) -> f64 {
    let sig: f64 = reference.iter().map(|v| v * v).sum();
    let err: f64 = reference.iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum();
    10.0 * (sig / err.max(1e-300)).log10()
}

/// Per-tensor outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    /// ‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞), zero when both sit below the
    /// finite-difference resolution
    pub rel_err: f64,
    pub n: usize,
}

/// Central differences (step 1e-3) on every scalar of every parameter,
/// evaluating the loss with fresh forward passes.
pub fn finite_difference_check(
    model: &neuroamp::nn::AmpModel<f64>,
    x: &neuroamp::nn::Mat<f64>,
    y: &neuroamp::nn::Mat<f64>,
    a: &neuroamp::prescription::Audiogram,
) -> Vec<TensorCheck> {
    const H: f64 = 1e-3;
    let (loss, grads) = model.loss_and_grads(x, y, a).unwrap();
    // numeric derivatives below this are indistinguishable from rounding in the loss
    let resolution = 64.0 * f64::EPSILON * loss.abs().max(1.0) / H;
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (pi, name) in model.params.names().iter().enumerate() {
        let (mut diff, mut a_max, mut n_max) = (0.0f64, 0.0f64, 0.0f64);
        for k in 0..model.params.values()[pi].len() {
            let orig = model.params.values()[pi].data[k];
            probe.params.values_mut()[pi].data[k] = orig + H;
            let lp = probe.loss(x, y, a).unwrap();
            probe.params.values_mut()[pi].data[k] = orig - H;
            let lm = probe.loss(x, y, a).unwrap();
            probe.params.values_mut()[pi].data[k] = orig;
            let numeric = (lp - lm) / (2.0 * H);
            let analytic = grads[pi].data[k];
            diff = diff.max((analytic - numeric).abs());
            a_max = a_max.max(analytic.abs());
            n_max = n_max.max(numeric.abs());
        }
        let scale = a_max.max(n_max);
        let rel_err = if scale <= resolution { 0.0 } else { diff / scale };
        out.push(TensorCheck { name: name.clone(), rel_err, n: grads[pi].len() });
    }
    out
}

pub fn random_mat(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> neuroamp::nn::Mat<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    neuroamp::nn::Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}
