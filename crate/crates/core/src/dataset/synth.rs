//! Speech-like test material: harmonic voices with drifting pitch and
//! formants under syllabic amplitude modulation, and three noise families.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const FS: f64 = 16_000.0;
const MAX_HARMONIC_HZ: f64 = 7_500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble];
}

fn scale_to_rms(x: &mut [f64], rms_target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = rms_target / rms;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Piecewise-linear trajectory through random targets spaced 120–300 ms apart.
fn trajectory(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut knots = vec![(0usize, rng.gen_range(lo..hi))];
    while knots.last().unwrap().0 < len {
        let step = (rng.gen_range(0.12..0.30) * FS) as usize;
        knots.push((knots.last().unwrap().0 + step, rng.gen_range(lo..hi)));
    }
    let mut out = Vec::with_capacity(len);
    for w in knots.windows(2) {
        let (a, va) = w[0];
        let (b, vb) = w[1];
        for n in a..b.min(len) {
            let frac = (n - a) as f64 / (b - a) as f64;
            // cosine easing keeps formant motion smooth
            let e = 0.5 - 0.5 * (PI * frac).cos();
            out.push(va + e * (vb - va));
        }
    }
    out
}

fn envelope_at(f: f64, formants: &[(f64, f64, f64)]) -> f64 {
    let resonances: f64 = formants.iter().map(|&(fc, bw, w)| w / (1.0 + ((f - fc) / bw).powi(2))).sum();
    (resonances + 0.02) / (1.0 + f / 500.0).sqrt()
}

/// A voiced, speech-like utterance of `len` samples at RMS `rms` (linear).
pub fn speech_like(rng: &mut ChaCha8Rng, len: usize, rms: f64) -> Vec<f64> {
    let f0_base = rng.gen_range(90.0..240.0);
    let vib_rate = rng.gen_range(0.5..2.0);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let glide = rng.gen_range(-0.15..0.15);
    let f1 = trajectory(rng, len, 300.0, 850.0);
    let f2 = trajectory(rng, len, 850.0, 2400.0);
    let f3 = trajectory(rng, len, 2300.0, 3400.0);
    let syl_rate = rng.gen_range(3.0..6.0);
    let syl_phase = rng.gen_range(0.0..2.0 * PI);
    let depth = rng.gen_range(0.5..0.85);
    let dur = len as f64 / FS;

    let max_k = (MAX_HARMONIC_HZ / 60.0) as usize;
    let mut phases = vec![0.0f64; max_k + 1];
    let mut voiced = vec![0.0f64; len];
    let mut syllable = vec![0.0f64; len];
    for n in 0..len {
        let t = n as f64 / FS;
        let f0 = f0_base * (1.0 + 0.08 * (2.0 * PI * vib_rate * t + vib_phase).sin() + glide * t / dur);
        let formants = [(f1[n], 80.0, 1.0), (f2[n], 120.0, 0.6), (f3[n], 200.0, 0.35)];
        let mut acc = 0.0;
        for (k, ph) in phases.iter_mut().enumerate().skip(1) {
            let fk = k as f64 * f0;
            if fk > MAX_HARMONIC_HZ {
                break;
            }
            *ph = (*ph + 2.0 * PI * fk / FS) % (2.0 * PI);
            acc += envelope_at(fk, &formants) * ph.sin();
        }
        let syl = (1.0 - depth) + depth * 0.5 * (1.0 - (2.0 * PI * syl_rate * t + syl_phase).cos());
        voiced[n] = acc;
        syllable[n] = syl;
    }
    scale_to_rms(&mut voiced, 1.0);
    // aspiration/frication: differentiated noise, strongest between syllable peaks
    let mut prev = 0.0;
    let mut frication = Vec::with_capacity(len);
    for _ in 0..len {
        let w: f64 = StandardNormal.sample(rng);
        frication.push(w - prev);
        prev = w;
    }
    scale_to_rms(&mut frication, 0.1);
    let ramp = (0.02 * FS) as usize;
    let mut out: Vec<f64> = (0..len)
        .map(|n| {
            let edge = (n.min(len - 1 - n) as f64 / ramp as f64).min(1.0);
            edge * (syllable[n] * voiced[n] + (1.2 - syllable[n]) * frication[n])
        })
        .collect();
    scale_to_rms(&mut out, rms);
    out
}

/// Noise track of `len` samples at RMS `rms`.
pub fn noise(rng: &mut ChaCha8Rng, kind: NoiseKind, len: usize, rms: f64) -> Vec<f64> {
    let mut out: Vec<f64> = match kind {
        NoiseKind::White => (0..len).map(|_| StandardNormal.sample(rng)).collect(),
        NoiseKind::Pink => {
            // Kellet's refined pinking filter
            let mut b = [0.0f64; 7];
            (0..len)
                .map(|_| {
                    let w: f64 = StandardNormal.sample(rng);
                    b[0] = 0.99886 * b[0] + w * 0.0555179;
                    b[1] = 0.99332 * b[1] + w * 0.0750759;
                    b[2] = 0.96900 * b[2] + w * 0.1538520;
                    b[3] = 0.86650 * b[3] + w * 0.3104856;
                    b[4] = 0.55000 * b[4] + w * 0.5329522;
                    b[5] = -0.7616 * b[5] - w * 0.0168980;
                    let y = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + w * 0.5362;
                    b[6] = w * 0.115926;
                    y
                })
                .collect()
        }
        NoiseKind::Babble => {
            let mut acc = vec![0.0; len];
            for _ in 0..4 {
                for (a, v) in acc.iter_mut().zip(speech_like(rng, len, 1.0)) {
                    *a += v;
                }
            }
            acc
        }
    };
    scale_to_rms(&mut out, rms);
    out
}
