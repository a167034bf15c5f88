//! Score-population statistics and spectral comparison measures.
//!
//! Per-utterance proxy scores (log-spectral distance, segmental SNR and
//! band-energy MSE) are computed for a test system and for the reference
//! pipeline against a common anchor signal; the two score populations are then
//! compared with Pearson, Spearman and mean squared difference.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::par_map;
use crate::prescription::AUDIOGRAM_FREQS_HZ;
use crate::scalar::Real;
use crate::signal::{stft, Frames, StftConfig, WaveBuffer, SAMPLE_RATE_HZ};

pub const LSD_EPS: f64 = 1e-8;
pub const ENERGY_FLOOR_DB: f64 = -120.0;
/// Band edges in Hz; the last band includes Nyquist.
pub const BANDS_HZ: [(f64, f64); 3] = [(0.0, 500.0), (500.0, 2000.0), (2000.0, 8000.0)];
pub const SEG_SNR_RANGE_DB: (f64, f64) = (-10.0, 35.0);

/// Scores aligned with utterance ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub utt_ids: Vec<String>,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(utt_ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        if utt_ids.len() != scores.len() {
            return Err(Error::ShapeMismatch(format!("{} ids for {} scores", utt_ids.len(), scores.len())));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::InvalidInput(format!("score for `{}` is NaN", utt_ids[i])));
        }
        Ok(Self { utt_ids, scores })
    }

    /// Ids `0..n` as strings.
    pub fn anonymous(scores: Vec<f64>) -> Result<Self> {
        Self::new((0..scores.len()).map(|i| i.to_string()).collect(), scores)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn aligned<'a>(x: &'a ScoreVector, y: &'a ScoreVector) -> Result<(&'a [f64], &'a [f64])> {
    if x.utt_ids != y.utt_ids {
        return Err(Error::ShapeMismatch("score vectors are not aligned on utterance ids".into()));
    }
    Ok((&x.scores, &y.scores))
}

/// Pearson correlation of two equal-length slices.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} scores", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("correlation needs at least two scores".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} scores", x.len(), y.len())));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn lcc(x: &ScoreVector, y: &ScoreVector) -> Result<f64> {
    let (a, b) = aligned(x, y)?;
    pearson(a, b)
}

pub fn srcc(x: &ScoreVector, y: &ScoreVector) -> Result<f64> {
    let (a, b) = aligned(x, y)?;
    spearman(a, b)
}

pub fn mse_scores(x: &ScoreVector, y: &ScoreVector) -> Result<f64> {
    let (a, b) = aligned(x, y)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64)
}

fn same_shape<T: Real>(a: &Frames<T>, b: &Frames<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?} spectrogram", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean over frames of the RMS (over bins) dB ratio between two magnitude spectrograms.
pub fn log_spectral_distance<T: Real>(a: &Frames<T>, b: &Frames<T>) -> Result<f64> {
    same_shape(a, b)?;
    if a.n_frames == 0 {
        return Ok(0.0);
    }
    let total: f64 = a
        .rows()
        .zip(b.rows())
        .map(|(ra, rb)| {
            let ms = ra
                .iter()
                .zip(rb)
                .map(|(p, q)| {
                    let d = 20.0 * ((p.as_f64() + LSD_EPS) / (q.as_f64() + LSD_EPS)).log10();
                    d * d
                })
                .sum::<f64>()
                / a.n_bins as f64;
            ms.sqrt()
        })
        .sum();
    Ok(total / a.n_frames as f64)
}

/// Per-frame dB energy in the three analysis bands.
#[derive(Debug, Clone, PartialEq)]
pub struct BandEnergyTrack {
    pub low: Vec<f64>,
    pub mid: Vec<f64>,
    pub high: Vec<f64>,
}

impl BandEnergyTrack {
    pub const CSV_HEADER: &'static str = "frame,low_db,mid_db,high_db";

    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    pub fn bands(&self) -> [&[f64]; 3] {
        [&self.low, &self.mid, &self.high]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for t in 0..self.len() {
            s.push_str(&format!("{t},{},{},{}\n", self.low[t], self.mid[t], self.high[t]));
        }
        s
    }

    /// Mean over all frames and bands.
    pub fn mean_db(&self) -> f64 {
        if self.is_empty() {
            return ENERGY_FLOOR_DB;
        }
        self.bands().iter().flat_map(|b| b.iter()).sum::<f64>() / (3 * self.len()) as f64
    }
}

/// Band index of each bin of a one-sided spectrum with `n_bins` bins at 16 kHz.
pub fn band_of_bins(n_bins: usize) -> Vec<usize> {
    let fft_size = 2 * (n_bins.max(2) - 1);
    (0..n_bins)
        .map(|k| {
            let f = k as f64 * SAMPLE_RATE_HZ as f64 / fft_size as f64;
            BANDS_HZ.iter().position(|&(_, hi)| f < hi).unwrap_or(BANDS_HZ.len() - 1)
        })
        .collect()
}

fn energy_db(e: f64) -> f64 {
    (10.0 * e.log10()).max(ENERGY_FLOOR_DB)
}

pub fn band_energy<T: Real>(mag: &Frames<T>) -> BandEnergyTrack {
    let band = band_of_bins(mag.n_bins);
    let mut tracks = [Vec::new(), Vec::new(), Vec::new()];
    for row in mag.rows() {
        let mut e = [0.0f64; 3];
        for (m, &b) in row.iter().zip(&band) {
            e[b] += m.as_f64() * m.as_f64();
        }
        for (track, v) in tracks.iter_mut().zip(e) {
            track.push(energy_db(v));
        }
    }
    let [low, mid, high] = tracks;
    BandEnergyTrack { low, mid, high }
}

/// Mean squared dB difference between two band-energy tracks.
pub fn band_energy_mse(a: &BandEnergyTrack, b: &BandEnergyTrack) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} frames", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .bands()
        .iter()
        .zip(b.bands())
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)))
        .sum();
    Ok(sum / (3 * a.len()) as f64)
}

fn same_len<T: Real>(a: &WaveBuffer<T>, b: &WaveBuffer<T>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    Ok(())
}

/// Mean per-frame SNR of `test` against `reference`, each frame clamped to
/// [`SEG_SNR_RANGE_DB`]. Frames follow the STFT framing without padding.
pub fn segmental_snr<T: Real>(reference: &WaveBuffer<T>, test: &WaveBuffer<T>, cfg: &StftConfig) -> Result<f64> {
    same_len(reference, test)?;
    let (lo, hi) = SEG_SNR_RANGE_DB;
    let n = reference.len();
    let win = cfg.win_len.min(n.max(1));
    let mut starts: Vec<usize> = (0..).map(|i| i * cfg.hop).take_while(|s| s + win <= n).collect();
    if starts.is_empty() {
        starts.push(0);
    }
    let total: f64 = starts
        .iter()
        .map(|&s| {
            let e = s + win.min(n - s);
            let (mut sig, mut err) = (0.0f64, 0.0f64);
            for (r, t) in reference.samples[s..e].iter().zip(&test.samples[s..e]) {
                let (r, t) = (r.as_f64(), t.as_f64());
                sig += r * r;
                err += (r - t) * (r - t);
            }
            if err == 0.0 {
                return hi;
            }
            if sig == 0.0 {
                return lo;
            }
            (10.0 * (sig / err).log10()).clamp(lo, hi)
        })
        .sum();
    Ok(total / starts.len() as f64)
}

/// Long-term average power spectrum (mean of |X|² over frames).
fn long_term_power<T: Real>(wave: &WaveBuffer<T>, cfg: &StftConfig) -> Result<Vec<f64>> {
    let mag = stft(wave, cfg)?.magnitude();
    let mut p = vec![0.0f64; mag.n_bins];
    for row in mag.rows() {
        for (acc, m) in p.iter_mut().zip(row) {
            *acc += m.as_f64() * m.as_f64();
        }
    }
    let n = mag.n_frames.max(1) as f64;
    Ok(p.into_iter().map(|v| v / n).collect())
}

/// Bins whose centre lies within a third octave around `f_hz`.
pub fn third_octave_bins(f_hz: f64, cfg: &StftConfig) -> Vec<usize> {
    let (lo, hi) = (f_hz * 2f64.powf(-1.0 / 6.0), f_hz * 2f64.powf(1.0 / 6.0));
    (0..cfg.n_bins())
        .filter(|&k| {
            let f = cfg.bin_hz(k, SAMPLE_RATE_HZ);
            f >= lo && f <= hi
        })
        .collect()
}

/// Realized gain `out − in` in dB at each audiogram frequency.
pub fn effective_gain<T: Real>(input: &WaveBuffer<T>, output: &WaveBuffer<T>, cfg: &StftConfig) -> Result<[f64; 6]> {
    same_len(input, output)?;
    let pin = long_term_power(input, cfg)?;
    let pout = long_term_power(output, cfg)?;
    let mut g = [0.0; 6];
    for (gi, &f) in g.iter_mut().zip(&AUDIOGRAM_FREQS_HZ) {
        let bins = third_octave_bins(f, cfg);
        let a: f64 = bins.iter().map(|&k| pin[k]).sum();
        let b: f64 = bins.iter().map(|&k| pout[k]).sum();
        *gi = energy_db(b) - energy_db(a);
    }
    Ok(g)
}

/// One utterance to score: the system output, the reference pipeline output and
/// the anchor both are scored against.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub utt_id: String,
    pub condition: String,
    pub anchor: WaveBuffer<f64>,
    pub reference: WaveBuffer<f64>,
    pub test: WaveBuffer<f64>,
}

/// Proxy scores of one signal against an anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub utt_id: String,
    pub condition: String,
    pub lsd_db: f64,
    pub seg_snr_db: f64,
    pub band_energy_mse: f64,
}

impl EvalRow {
    pub const CSV_HEADER: &'static str = "utt_id,condition,lsd_db,seg_snr_db,band_energy_mse";

    pub fn score(anchor: &WaveBuffer<f64>, signal: &WaveBuffer<f64>, utt_id: &str, condition: &str, cfg: &StftConfig) -> Result<Self> {
        same_len(anchor, signal)?;
        let ma = stft(anchor, cfg)?.magnitude();
        let ms = stft(signal, cfg)?.magnitude();
        Ok(Self {
            utt_id: utt_id.to_string(),
            condition: condition.to_string(),
            lsd_db: log_spectral_distance(&ms, &ma)?,
            seg_snr_db: segmental_snr(anchor, signal, cfg)?,
            band_energy_mse: band_energy_mse(&band_energy(&ms), &band_energy(&ma))?,
        })
    }

    fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.utt_id, self.condition, self.lsd_db, self.seg_snr_db, self.band_energy_mse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub lcc: f64,
    pub srcc: f64,
    pub mse: f64,
}

impl Agreement {
    pub fn between(test: &ScoreVector, reference: &ScoreVector) -> Result<Self> {
        Ok(Self { lcc: lcc(test, reference)?, srcc: srcc(test, reference)?, mse: mse_scores(test, reference)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub lsd_db: Agreement,
    pub seg_snr_db: Agreement,
    pub band_energy_mse: Agreement,
}

/// Rows for the test system and the reference pipeline, sorted by utterance id.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub reference_rows: Vec<EvalRow>,
}

fn scores(rows: &[EvalRow], f: impl Fn(&EvalRow) -> f64) -> Result<ScoreVector> {
    ScoreVector::new(rows.iter().map(|r| r.utt_id.clone()).collect(), rows.iter().map(f).collect())
}

impl EvalReport {
    pub fn evaluate(items: &[EvalItem], cfg: &StftConfig, jobs: usize) -> Result<Self> {
        let mut pairs = par_map(items, jobs, |it| -> Result<(EvalRow, EvalRow)> {
            Ok((
                EvalRow::score(&it.anchor, &it.test, &it.utt_id, &it.condition, cfg)?,
                EvalRow::score(&it.anchor, &it.reference, &it.utt_id, &it.condition, cfg)?,
            ))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        pairs.sort_by(|a, b| a.0.utt_id.cmp(&b.0.utt_id));
        let (rows, reference_rows) = pairs.into_iter().unzip();
        Ok(Self { rows, reference_rows })
    }

    /// Test-versus-reference agreement for each proxy score.
    pub fn summary(&self) -> Result<EvalSummary> {
        let agree = |f: fn(&EvalRow) -> f64| Agreement::between(&scores(&self.rows, f)?, &scores(&self.reference_rows, f)?);
        Ok(EvalSummary {
            lsd_db: agree(|r| r.lsd_db)?,
            seg_snr_db: agree(|r| r.seg_snr_db)?,
            band_energy_mse: agree(|r| r.band_energy_mse)?,
        })
    }

    /// Test rows followed by reference rows, distinguished by a `system` column.
    pub fn to_csv(&self) -> String {
        let mut s = format!("system,{}\n", EvalRow::CSV_HEADER);
        for (system, rows) in [("test", &self.rows), ("reference", &self.reference_rows)] {
            for r in rows {
                s.push_str(&format!("{system},{}\n", r.csv_line()));
            }
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
