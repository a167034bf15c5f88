//! Corpus construction: synthetic material, SNR mixing, manifests, reference
//! targets and network training pairs.
//!
//! Layout under a corpus root:
//!
//! ```text
//! root/manifest.jsonl        one ManifestEntry per line, paths relative to root
//! root/audiograms.json       audiogram bank (after build_targets)
//! root/clean/<utt>.wav
//! root/noisy/<utt>_snr<±d>.wav
//! root/target/<utt>__<audiogram>.wav
//! ```

pub mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::par_map;
use crate::prescription::{generate_audiogram, Audiogram, HearingLossPattern};
use crate::scalar::Real;
use crate::signal::{magnitude_phase, read_wav, stft, write_wav, Frames, StftConfig, WaveBuffer, RMS_FLOOR};
use crate::wdrc::{amplify_reference, CompressorConfig};
use synth::NoiseKind;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const AUDIOGRAM_FILE: &str = "audiograms.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clean,
    Noisy,
    Enhanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// How inputs and reference targets are paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Target is the reference amplification of the input signal itself.
    NeuroAmp,
    /// Target is the reference amplification of the clean signal; input stays noisy.
    Denoising,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub input_path: String,
    #[serde(default)]
    pub target_path: String,
    pub clean_path: String,
    #[serde(default)]
    pub audiogram_id: String,
    pub condition: Condition,
    pub snr_db: Option<f64>,
    pub split: Split,
}

/// Manifest entries plus the directory their relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            entries.push(serde_json::from_str(line)?);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        fs::File::create(path).and_then(|mut f| f.write_all(&buf)).map_err(|e| Error::io(path, e))
    }

    /// Every utterance id belongs to one split, and `(utt_id, audiogram_id)` is unique within a split.
    pub fn check_hygiene(&self) -> Result<()> {
        let mut split_of: HashMap<&str, Split> = HashMap::new();
        let mut seen = HashSet::new();
        for e in &self.entries {
            let base = base_utt_id(&e.utt_id);
            if let Some(prev) = split_of.insert(base, e.split) {
                if prev != e.split {
                    return Err(Error::InvalidInput(format!("utterance `{base}` appears in {prev:?} and {:?}", e.split)));
                }
            }
            if !seen.insert((e.split, e.utt_id.as_str(), e.audiogram_id.as_str())) {
                return Err(Error::InvalidInput(format!(
                    "duplicate ({}, {}) in {:?}",
                    e.utt_id, e.audiogram_id, e.split
                )));
            }
        }
        Ok(())
    }
}

/// Utterance id without its condition suffix (`utt0003_snr-5` → `utt0003`).
pub fn base_utt_id(utt_id: &str) -> &str {
    utt_id.split('_').next().unwrap_or(utt_id)
}

/// Stable per-entry seed: FNV-1a over the key, mixed with the corpus seed.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finalizer
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Result of an SNR mix.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub wave: WaveBuffer<f64>,
    /// Factor applied to the noise segment before adding.
    pub noise_scale: f64,
    /// Factor applied to the whole mixture to avoid clipping (1 when untouched).
    pub peak_scale: f64,
}

/// Add `noise` to `clean` at `snr_db`. The noise segment starts at a seeded
/// offset and is looped when shorter than the clean signal.
pub fn mix_at_snr(clean: &WaveBuffer<f64>, noise: &WaveBuffer<f64>, snr_db: f64, seed: u64) -> Result<Mixture> {
    if clean.is_empty() || noise.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let clean_rms = clean.rms();
    if clean_rms <= RMS_FLOOR {
        return Err(Error::SilentClean);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = if noise.len() > clean.len() { rng.gen_range(0..=noise.len() - clean.len()) } else { 0 };
    let segment: Vec<f64> = (0..clean.len()).map(|i| noise.samples[(offset + i) % noise.len()]).collect();
    let noise_rms = (segment.iter().map(|v| v * v).sum::<f64>() / segment.len() as f64).sqrt();
    if noise_rms <= RMS_FLOOR {
        return Err(Error::InvalidInput("noise segment is silent".into()));
    }
    let noise_scale = clean_rms / noise_rms * 10f64.powf(-snr_db / 20.0);
    let mut mixed: Vec<f64> = clean.samples.iter().zip(&segment).map(|(c, n)| c + noise_scale * n).collect();
    let peak = mixed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut peak_scale = 1.0;
    if peak > 1.0 {
        peak_scale = 1.0 / peak;
        mixed.iter_mut().for_each(|v| *v *= peak_scale);
    }
    Ok(Mixture { wave: WaveBuffer::new(mixed, clean.sample_rate_hz)?, noise_scale, peak_scale })
}

fn snr_tag(snr: f64) -> String {
    format!("snr{snr:+}")
}

/// Parameters for the bundled synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_utts: usize,
    /// Utterances held out for validation; `None` means `n_utts / 10`.
    pub n_val: Option<usize>,
    /// Utterances held out for testing; `None` means `n_utts / 10`.
    pub n_test: Option<usize>,
    pub train_snrs_db: Vec<f64>,
    pub test_snrs_db: Vec<f64>,
    pub min_dur_s: f64,
    pub max_dur_s: f64,
    /// Speech RMS range in dBFS.
    pub level_dbfs: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_utts: 10,
            n_val: None,
            n_test: None,
            train_snrs_db: vec![-5.0, 0.0, 5.0],
            test_snrs_db: vec![-6.0, 0.0, 6.0],
            min_dur_s: 1.0,
            max_dur_s: 3.0,
            level_dbfs: (-28.0, -22.0),
        }
    }
}

impl SynthConfig {
    pub fn split_sizes(&self) -> Result<(usize, usize, usize)> {
        let n_val = self.n_val.unwrap_or(self.n_utts / 10);
        let n_test = self.n_test.unwrap_or(self.n_utts / 10);
        if self.n_utts == 0 || n_val + n_test >= self.n_utts {
            return Err(Error::InvalidInput(format!(
                "{} utterances cannot hold {n_val} val + {n_test} test and a nonempty train split",
                self.n_utts
            )));
        }
        Ok((self.n_utts - n_val - n_test, n_val, n_test))
    }
}

fn write_wave(root: &Path, rel: &str, wave: &WaveBuffer<f64>) -> Result<usize> {
    let path = root.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_wav(&path, wave)
}

/// Generate a deterministic synthetic corpus under `out_dir` and write its manifest.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64, out_dir: impl AsRef<Path>, jobs: usize) -> Result<Manifest> {
    let root = out_dir.as_ref().to_path_buf();
    let (n_train, n_val, _) = cfg.split_sizes()?;
    if !(cfg.min_dur_s > 0.0 && cfg.max_dur_s >= cfg.min_dur_s) {
        return Err(Error::InvalidInput("duration range must be positive and ordered".into()));
    }
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let utts: Vec<(usize, String, Split)> = (0..cfg.n_utts)
        .map(|i| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (i, format!("utt{i:04}"), split)
        })
        .collect();
    let per_utt = par_map(&utts, jobs, |(_, utt, split)| -> Result<Vec<ManifestEntry>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, utt));
        let len = (rng.gen_range(cfg.min_dur_s..=cfg.max_dur_s) * 16_000.0) as usize;
        let level = if cfg.level_dbfs.0 < cfg.level_dbfs.1 {
            rng.gen_range(cfg.level_dbfs.0..cfg.level_dbfs.1)
        } else {
            cfg.level_dbfs.0
        };
        let clean = WaveBuffer::from_samples(synth::speech_like(&mut rng, len, 10f64.powf(level / 20.0)))?;
        let clean_rel = format!("clean/{utt}.wav");
        write_wave(&root, &clean_rel, &clean)?;
        // mix from the quantized clean so input and reference share samples exactly
        let clean = read_wav::<f64>(root.join(&clean_rel))?;
        let mut entries = vec![ManifestEntry {
            utt_id: utt.clone(),
            input_path: clean_rel.clone(),
            target_path: String::new(),
            clean_path: clean_rel.clone(),
            audiogram_id: String::new(),
            condition: Condition::Clean,
            snr_db: None,
            split: *split,
        }];
        let snrs = if *split == Split::Test { &cfg.test_snrs_db } else { &cfg.train_snrs_db };
        for &snr in snrs {
            let id = format!("{utt}_{}", snr_tag(snr));
            let mut nrng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &id));
            let kind = NoiseKind::ALL[nrng.gen_range(0..NoiseKind::ALL.len())];
            let noise = WaveBuffer::from_samples(synth::noise(&mut nrng, kind, len + 16_000, 0.1))?;
            let mix = mix_at_snr(&clean, &noise, snr, nrng.gen())?;
            if mix.peak_scale != 1.0 {
                log::warn!("{id}: mixture peak-normalized by {:.4}", mix.peak_scale);
            }
            let rel = format!("noisy/{id}.wav");
            write_wave(&root, &rel, &mix.wave)?;
            entries.push(ManifestEntry {
                utt_id: id,
                input_path: rel,
                target_path: String::new(),
                clean_path: clean_rel.clone(),
                audiogram_id: String::new(),
                condition: Condition::Noisy,
                snr_db: Some(snr),
                split: *split,
            });
        }
        Ok(entries)
    });
    let mut entries = Vec::new();
    for r in per_utt {
        entries.extend(r?);
    }
    let manifest = Manifest { root: root.clone(), entries };
    manifest.save(root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// A bank of `n` audiograms cycling through the given patterns.
pub fn audiogram_bank(patterns: &[HearingLossPattern], n: usize, seed: u64) -> Result<Vec<Audiogram>> {
    if patterns.is_empty() {
        return Err(Error::InvalidInput("no hearing-loss patterns".into()));
    }
    (0..n).map(|i| generate_audiogram(&patterns[i % patterns.len()], derive_seed(seed, &format!("aud{i}")))).collect()
}

pub fn save_audiograms(path: impl AsRef<Path>, bank: &[Audiogram]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(bank)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Outcome of [`build_targets`].
#[derive(Debug, Clone)]
pub struct TargetBuild {
    pub manifest: Manifest,
    /// Target samples clipped to full scale during resynthesis.
    pub clipped_samples: usize,
}

/// Pair every entry with `per_utt` audiograms (round-robin over `bank`, by
/// utterance) and write the reference-amplified target for each pairing.
/// Entries that already carry an audiogram id keep it.
pub fn build_targets(
    manifest: &Manifest,
    bank: &[Audiogram],
    cfg: &CompressorConfig,
    stft_cfg: &StftConfig,
    mode: PairingMode,
    per_utt: usize,
    jobs: usize,
) -> Result<TargetBuild> {
    if bank.is_empty() || per_utt == 0 {
        return Err(Error::InvalidInput("need at least one audiogram per utterance".into()));
    }
    cfg.validate(crate::signal::SAMPLE_RATE_HZ)?;
    let by_id: HashMap<&str, &Audiogram> = bank.iter().map(|a| (a.id(), a)).collect();
    for e in &manifest.entries {
        for rel in [&e.clean_path, &e.input_path] {
            let p = manifest.resolve(rel);
            if !p.is_file() {
                return Err(Error::MissingAudio(p));
            }
        }
        if !e.audiogram_id.is_empty() && !by_id.contains_key(e.audiogram_id.as_str()) {
            return Err(Error::InvalidInput(format!("unknown audiogram `{}`", e.audiogram_id)));
        }
    }
    let mut utt_index: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &manifest.entries {
        let n = utt_index.len();
        utt_index.entry(base_utt_id(&e.utt_id)).or_insert(n);
    }
    let mut entries = Vec::new();
    // target file -> (source path, audiogram)
    let mut jobs_by_target: BTreeMap<String, (String, &Audiogram)> = BTreeMap::new();
    for e in &manifest.entries {
        let assigned: Vec<&Audiogram> = if e.audiogram_id.is_empty() {
            let i = utt_index[base_utt_id(&e.utt_id)];
            (0..per_utt.min(bank.len())).map(|j| &bank[(i * per_utt + j) % bank.len()]).collect()
        } else {
            vec![by_id[e.audiogram_id.as_str()]]
        };
        for a in assigned {
            let (source, stem) = match mode {
                PairingMode::NeuroAmp => (e.input_path.clone(), e.utt_id.as_str()),
                PairingMode::Denoising => (e.clean_path.clone(), base_utt_id(&e.utt_id)),
            };
            let target_rel = format!("target/{stem}__{}.wav", a.id());
            jobs_by_target.entry(target_rel.clone()).or_insert((source, a));
            entries.push(ManifestEntry { target_path: target_rel, audiogram_id: a.id().to_string(), ..e.clone() });
        }
    }
    let work: Vec<(&String, &(String, &Audiogram))> = jobs_by_target.iter().collect();
    let results = par_map(&work, jobs, |(target_rel, (source, a))| -> Result<usize> {
        let wave = read_wav::<f64>(manifest.resolve(source))?;
        let out = amplify_reference(&wave, a, cfg, stft_cfg)?;
        let clipped = out.wave.clipped;
        write_wave(&manifest.root, target_rel, &out.wave)?;
        Ok(clipped)
    });
    let mut clipped_samples = 0;
    for r in results {
        clipped_samples += r?;
    }
    if clipped_samples > 0 {
        log::warn!("reference targets clipped {clipped_samples} samples");
    }
    let out = Manifest { root: manifest.root.clone(), entries };
    out.check_hygiene()?;
    Ok(TargetBuild { manifest: out, clipped_samples })
}

/// Magnitudes are expressed in 16-bit PCM units before log compression.
pub const PCM_SCALE: f64 = 32_768.0;

/// `ln(1 + m)`, elementwise.
pub fn log_magnitude<T: Real>(mag: &Frames<T>) -> Frames<T> {
    mag.map(|m| m.ln_1p())
}

/// Network features of a full-scale magnitude spectrogram: `ln(1 + PCM_SCALE·|X|)`.
pub fn spectral_features<T: Real>(mag: &Frames<T>) -> Frames<T> {
    let k = T::lit(PCM_SCALE);
    mag.map(|m| (m * k).ln_1p())
}

/// Inverse of [`spectral_features`], clamped at zero.
pub fn magnitude_from_features<T: Real>(features: &Frames<T>) -> Frames<T> {
    let k = T::lit(1.0 / PCM_SCALE);
    features.map(|f| f.exp_m1().max(T::zero()) * k)
}

/// One network training/evaluation example.
#[derive(Debug, Clone)]
pub struct PairedExample<T> {
    pub utt_id: String,
    pub input_logmag: Frames<T>,
    pub target_logmag: Frames<T>,
    pub audiogram: Audiogram,
    pub input_phase: Frames<T>,
}

pub fn load_pair<T: Real>(
    manifest: &Manifest,
    entry: &ManifestEntry,
    audiograms: &HashMap<String, Audiogram>,
    stft_cfg: &StftConfig,
) -> Result<PairedExample<T>> {
    let audiogram = audiograms
        .get(&entry.audiogram_id)
        .ok_or_else(|| Error::InvalidInput(format!("unknown audiogram `{}`", entry.audiogram_id)))?
        .clone();
    if entry.target_path.is_empty() {
        return Err(Error::InvalidInput(format!("`{}` has no target; run build-targets first", entry.utt_id)));
    }
    let input = read_wav::<T>(manifest.resolve(&entry.input_path))?;
    let target = read_wav::<T>(manifest.resolve(&entry.target_path))?;
    let (in_mag, input_phase) = magnitude_phase(&stft(&input, stft_cfg)?);
    let target_mag = stft(&target, stft_cfg)?.magnitude();
    if in_mag.n_frames != target_mag.n_frames {
        return Err(Error::ShapeMismatch(format!(
            "`{}`: input has {} frames, target {}",
            entry.utt_id, in_mag.n_frames, target_mag.n_frames
        )));
    }
    Ok(PairedExample {
        utt_id: entry.utt_id.clone(),
        input_logmag: spectral_features(&in_mag),
        target_logmag: spectral_features(&target_mag),
        audiogram,
        input_phase,
    })
}

/// Loads every entry of `split` as a training pair.
pub fn load_split<T: Real>(
    manifest: &Manifest,
    split: Split,
    audiograms: &HashMap<String, Audiogram>,
    stft_cfg: &StftConfig,
) -> Result<Vec<PairedExample<T>>> {
    let out = manifest
        .split(split)
        .map(|e| load_pair(manifest, e, audiograms, stft_cfg))
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(Error::EmptySplit(format!("{split:?}").to_lowercase()));
    }
    Ok(out)
}
