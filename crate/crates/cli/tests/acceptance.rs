//! Acceptance suite. Every criterion is one test that prints a single
//! `[PASS]`/`[FAIL]` line (bypassing output capture) and then asserts.
//! Criteria run one at a time so their wall-clock budgets are meaningful.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::process::Command as Proc;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use neuroamp::dataset::{
    audiogram_bank, build_targets, load_split, synth_corpus, Condition, Manifest, PairingMode, Split, SynthConfig,
};
use neuroamp::metrics::{effective_gain, log_spectral_distance, lcc, mse_scores, srcc, EvalItem, EvalReport, ScoreVector};
use neuroamp::nn::{infer, train, AmpModel, Arch, Graph, Mat, ModelConfig, TrainConfig};
use neuroamp::prescription::{nalr_gains, Audiogram};
use neuroamp::signal::{decode_wav, encode_wav, istft, read_wav, stft, StftConfig, WaveBuffer};
use neuroamp::wdrc::{amplify_reference, amplify_with_gains, instantaneous_band_levels, CompressorConfig};
use neuroamp_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, title: &str, ok: bool, detail: &str, elapsed: Duration, budget: Duration) -> bool {
    let in_time = elapsed < budget;
    let pass = ok && in_time;
    let line = format!(
        "[{}] criterion {id}: {title}: {detail}; {:.1} s (budget {:.0} s{})\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64(),
        if in_time { "" } else { ", exceeded" },
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    pass
}

fn white(len: usize, amp: f64, seed: u64) -> WaveBuffer<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    WaveBuffer::from_samples((0..len).map(|_| rng.gen_range(-amp..amp)).collect()).unwrap()
}

/// Reflect-padded periodic-Hamming frame, built without the library.
fn oracle_frame(x: &[f64], t: usize, n: usize, hop: usize) -> Vec<f64> {
    let len = x.len() as isize;
    (0..n)
        .map(|i| {
            let mut j = (t * hop + i) as isize - (n / 2) as isize;
            while j < 0 || j >= len {
                j = if j < 0 { -j } else { 2 * (len - 1) - j };
            }
            x[j as usize] * (0.54 - 0.46 * (2.0 * PI * i as f64 / n as f64).cos())
        })
        .collect()
}

/// O(N²) DFT, bins `0..=N/2`, as (re, im).
fn naive_rdft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                (re + v * ang.cos(), im + v * ang.sin())
            })
        })
        .collect()
}

#[test]
fn criterion_1_dsp_oracles() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_rel = 0.0f64;
    for f in 0..20 {
        let w = white(rng.gen_range(2048..8000), 0.9, 1000 + f);
        let s = stft(&w, &cfg).unwrap();
        let t = rng.gen_range(0..s.n_frames);
        let oracle = naive_rdft(&oracle_frame(&w.samples, t, 512, 256));
        let norm = oracle.iter().map(|(r, i)| r * r + i * i).sum::<f64>().sqrt();
        let err = s.frame(t).iter().zip(&oracle).map(|(a, (r, i))| (a.re - r).powi(2) + (a.im - i).powi(2)).sum::<f64>().sqrt();
        worst_rel = worst_rel.max(err / norm);
    }
    let mut worst_snr = f64::INFINITY;
    for seed in 0..5 {
        let w = white(16000, 0.9, 50 + seed);
        let y = istft(&stft(&w, &cfg).unwrap()).unwrap();
        // interior: one window away from either end
        let (a, b) = (512, w.len() - 512);
        let sig: f64 = w.samples[a..b].iter().map(|v| v * v).sum();
        let err: f64 = w.samples[a..b].iter().zip(&y.samples[a..b]).map(|(p, q)| (p - q).powi(2)).sum();
        worst_snr = worst_snr.min(10.0 * (sig / err.max(1e-300)).log10());
    }
    let ok = worst_rel <= 1e-6 && worst_snr >= 60.0;
    let detail = format!("worst frame rel err {worst_rel:.2e} (≤ 1e-6), worst interior SNR {worst_snr:.1} dB (≥ 60)");
    assert!(report(1, "STFT oracle and round trip", ok, &detail, t0.elapsed(), Duration::from_secs(10)));
}

#[test]
fn criterion_2_nalr_table() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let flat0 = nalr_gains(&Audiogram::flat("f0", 0.0).unwrap()).gains_db;
    let ex1 = flat0 == [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let flat40 = nalr_gains(&Audiogram::flat("f40", 40.0).unwrap()).gains_db;
    let ex2 = flat40.iter().zip([1.4, 10.4, 19.4, 17.4, 16.4, 16.4]).all(|(g, w)| (g - w).abs() <= 1e-9);
    let slope = nalr_gains(&Audiogram::new("s", [20.0, 25.0, 35.0, 50.0, 65.0, 70.0]).unwrap()).gains_db;
    let ex3 = (slope[4] - 23.65).abs() <= 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..1000 {
        let base: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.0..120.0));
        let mut raised = base;
        let i = rng.gen_range(0..6);
        raised[i] = (raised[i] + rng.gen_range(0.0..30.0)).min(120.0);
        let lo = nalr_gains(&Audiogram::new("a", base).unwrap()).gains_db;
        let hi = nalr_gains(&Audiogram::new("b", raised).unwrap()).gains_db;
        violations += lo.iter().zip(&hi).filter(|(l, h)| h < l || **l < 0.0).count();
    }
    let ok = ex1 && ex2 && ex3 && violations == 0;
    let detail = format!("examples {ex1}/{ex2}/{ex3}, monotonicity violations {violations} over 1000 pairs");
    assert!(report(2, "NAL-R examples and monotonicity", ok, &detail, t0.elapsed(), Duration::from_secs(5)));
}

#[test]
fn criterion_3_wdrc_static_curve() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let comp = CompressorConfig::default();
    let cfg = StftConfig::default();
    let band = 2; // 707–1414 Hz holds 1 kHz
    let knee = comp.kneepoint_db_spl[band];
    let steady = |w: &WaveBuffer<f64>| {
        let inst = instantaneous_band_levels(&stft(w, &cfg).unwrap().magnitude(), &comp, &cfg, 16000).unwrap();
        // skip the attack transient and the edge frames
        let rows: Vec<f64> = (20..inst.n_frames - 4).map(|t| inst.row(t)[band]).collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    let mut worst = 0.0f64;
    for offset in [-10.0, 0.0, 5.0, 10.0, 20.0] {
        let amp = 10f64.powf((knee + offset - comp.calib_spl_at_0_dbfs) / 20.0);
        let x = WaveBuffer::from_samples((0..32000).map(|n| amp * (2.0 * PI * 1000.0 * n as f64 / 16000.0).sin()).collect()).unwrap();
        let l_in = steady(&x);
        let y = amplify_with_gains(&x, &neuroamp::prescription::GainCurve::zero(), &comp, &cfg).unwrap().wave;
        let want = l_in + comp.static_gain_db(band, l_in);
        worst = worst.max((steady(&y) - want).abs());
    }
    let detail = format!("worst deviation from the configured curve {worst:.3} dB (≤ 0.5)");
    assert!(report(3, "WDRC static curve at 1 kHz", worst <= 0.5, &detail, t0.elapsed(), Duration::from_secs(20)));
}

fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(0.0..10.0)).collect()).unwrap()
}

/// Worst per-tensor normwise relative error between backprop and central differences.
fn gradient_check(arch: Arch) -> (f64, String) {
    const H: f64 = 1e-3;
    let model = AmpModel::<f64>::new(ModelConfig::desk(arch), 17).unwrap();
    let x = random_mat(4, 257, 1);
    let y = random_mat(4, 257, 2);
    let a = Audiogram::new("s", [20.0, 30.0, 40.0, 50.0, 60.0, 70.0]).unwrap();
    let mut g = Graph::new(model.params.values());
    let p = model.forward_graph(&mut g, &x, &a).unwrap();
    let loss = g.mse(p, &y);
    let grads = g.backward(loss);
    let l0 = g.value(loss).data[0];
    let floor = 64.0 * f64::EPSILON * l0.abs().max(1.0) / H;
    let (mut worst, mut worst_name) = (0.0f64, String::new());
    for (pi, name) in model.params.names().iter().enumerate() {
        let analytic = grads[pi].as_ref().map(|m| m.data.clone()).unwrap_or_else(|| vec![0.0; model.params.values()[pi].len()]);
        let (mut diff, mut a_max, mut n_max) = (0.0f64, 0.0f64, 0.0f64);
        for (k, &an) in analytic.iter().enumerate() {
            let orig = model.params.values()[pi].data[k];
            g.set_param_scalar(pi, k, orig + H);
            g.replay();
            let lp = g.value(loss).data[0];
            g.set_param_scalar(pi, k, orig - H);
            g.replay();
            let lm = g.value(loss).data[0];
            g.set_param_scalar(pi, k, orig);
            let num = (lp - lm) / (2.0 * H);
            diff = diff.max((an - num).abs());
            a_max = a_max.max(an.abs());
            n_max = n_max.max(num.abs());
        }
        g.replay();
        let scale = a_max.max(n_max);
        // both sides below what central differences can resolve
        let rel = if scale <= floor { 0.0 } else { diff / scale };
        if rel >= worst {
            worst = rel;
            worst_name = name.clone();
        }
    }
    (worst, worst_name)
}

#[test]
fn criterion_4_gradient_checks() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for arch in Arch::ALL {
        let (worst, name) = gradient_check(arch);
        ok &= worst <= 1e-4;
        parts.push(format!("{arch} {worst:.1e} ({name})"));
    }
    let detail = format!("worst per-tensor rel err (≤ 1e-4): {}", parts.join(", "));
    assert!(report(4, "gradient checks, all architectures", ok, &detail, t0.elapsed(), Duration::from_secs(60)));
}

const CORPUS_SEED: u64 = 7;

struct Trained {
    _dir: tempfile::TempDir,
    manifest: Manifest,
    audiograms: HashMap<String, Audiogram>,
    model: AmpModel<f32>,
    epochs: usize,
}

/// 60 synthetic utterances: 45 train + 5 validation (the 50-utterance
/// training corpus) and 10 held out; two audiograms per utterance.
fn train_on_corpus(mode: PairingMode) -> Trained {
    let cfg = RunConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig { n_utts: 60, n_val: Some(5), n_test: Some(10), ..cfg.synth.clone() };
    let m = synth_corpus(&synth, CORPUS_SEED, dir.path(), 1).unwrap();
    let bank = audiogram_bank(&cfg.targets.patterns, 2, CORPUS_SEED).unwrap();
    let built = build_targets(&m, &bank, &cfg.compressor, &cfg.stft, mode, 2, 1).unwrap();
    let audiograms: HashMap<_, _> = bank.into_iter().map(|a| (a.id().to_string(), a)).collect();
    let tr = load_split::<f32>(&built.manifest, Split::Train, &audiograms, &cfg.stft).unwrap();
    let va = load_split::<f32>(&built.manifest, Split::Val, &audiograms, &cfg.stft).unwrap();
    let mut model = AmpModel::<f32>::new(ModelConfig::desk(Arch::Lstm), 1).unwrap();
    let tc = TrainConfig { max_epochs: 30, ..cfg.train };
    let h = train(&mut model, &tr, &va, &tc, |_| {}).unwrap();
    Trained { _dir: dir, manifest: built.manifest, audiograms, model, epochs: h.records.len() }
}

/// Network output as it would be stored on disk.
fn run_model(t: &Trained, input: &WaveBuffer<f64>, a: &Audiogram) -> WaveBuffer<f64> {
    let out = infer(&t.model, &input.cast::<f32>(), a, &StftConfig::default()).unwrap();
    decode_wav(&encode_wav(&out).unwrap().0).unwrap()
}

fn lsd_waves(a: &WaveBuffer<f64>, b: &WaveBuffer<f64>) -> f64 {
    let cfg = StftConfig::default();
    log_spectral_distance(&stft(a, &cfg).unwrap().magnitude(), &stft(b, &cfg).unwrap().magnitude()).unwrap()
}

#[test]
fn criterion_5_imitation_learning() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let cfg = StftConfig::default();
    let t = train_on_corpus(PairingMode::NeuroAmp);
    let mut items = Vec::new();
    let (mut lsd, mut g_model, mut g_ref) = (0.0, [0.0f64; 6], [0.0f64; 6]);
    let test: Vec<_> = t.manifest.split(Split::Test).cloned().collect();
    for e in &test {
        let input: WaveBuffer<f64> = read_wav(t.manifest.resolve(&e.input_path)).unwrap();
        let reference: WaveBuffer<f64> = read_wav(t.manifest.resolve(&e.target_path)).unwrap();
        let out = run_model(&t, &input, &t.audiograms[&e.audiogram_id]);
        lsd += lsd_waves(&out, &reference);
        let gm = effective_gain(&input, &out, &cfg).unwrap();
        let gr = effective_gain(&input, &reference, &cfg).unwrap();
        for i in 0..6 {
            g_model[i] += gm[i];
            g_ref[i] += gr[i];
        }
        items.push(EvalItem { utt_id: format!("{}__{}", e.utt_id, e.audiogram_id), condition: String::new(), anchor: input, reference, test: out });
    }
    let n = test.len() as f64;
    lsd /= n;
    let summary = EvalReport::evaluate(&items, &cfg, 1).unwrap().summary().unwrap();
    let band_lcc = summary.band_energy_mse.lcc;
    // 1, 2 and 4 kHz
    let gain_dev = [2, 3, 4].iter().map(|&i| ((g_model[i] - g_ref[i]) / n).abs()).fold(0.0, f64::max);
    let ok = lsd <= 3.0 && band_lcc >= 0.95 && gain_dev <= 3.0;
    let detail = format!(
        "{} test pairs, {} epochs: (a) mean LSD {lsd:.3} dB (≤ 3), (b) band-energy LCC {band_lcc:.4} (≥ 0.95), \
         (c) worst 1-4 kHz effective-gain deviation {gain_dev:.2} dB (≤ 3)",
        test.len(),
        t.epochs
    );
    assert!(report(5, "LSTM imitation of NAL-R + WDRC", ok, &detail, t0.elapsed(), Duration::from_secs(900)));
}

#[test]
fn criterion_6_denoising() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let t = train_on_corpus(PairingMode::Denoising);
    let comp = CompressorConfig::default();
    let (mut model, mut noisy, mut amp_noisy, mut n) = (0.0, 0.0, 0.0, 0.0);
    for e in t.manifest.split(Split::Test).filter(|e| e.condition == Condition::Noisy) {
        let input: WaveBuffer<f64> = read_wav(t.manifest.resolve(&e.input_path)).unwrap();
        let target: WaveBuffer<f64> = read_wav(t.manifest.resolve(&e.target_path)).unwrap();
        let a = &t.audiograms[&e.audiogram_id];
        model += lsd_waves(&run_model(&t, &input, a), &target);
        noisy += lsd_waves(&input, &target);
        amp_noisy += lsd_waves(&amplify_reference(&input, a, &comp, &StftConfig::default()).unwrap().wave, &target);
        n += 1.0;
    }
    let (model, noisy, amp_noisy) = (model / n, noisy / n, amp_noisy / n);
    let improvement = 1.0 - model / noisy;
    let ok = improvement >= 0.30 && model < amp_noisy;
    let detail = format!(
        "{n} noisy test pairs, {} epochs: model LSD {model:.2} dB vs unprocessed noisy {noisy:.2} dB \
         ({:.1}% better, ≥ 30%); NAL-R + WDRC on noisy input {amp_noisy:.2} dB (model must be lower)",
        t.epochs,
        100.0 * improvement
    );
    assert!(report(6, "denoising pairing", ok, &detail, t0.elapsed(), Duration::from_secs(900)));
}

fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in 0..x.len() {
            sxy += (x[i] - x[j]) * (y[i] - y[j]);
            sxx += (x[i] - x[j]).powi(2);
            syy += (y[i] - y[j]).powi(2);
        }
    }
    sxy / (sxx * syy).sqrt()
}

fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let eq = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}

#[test]
fn criterion_7_statistics_oracle() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let (mut worst, mut ties) = (0.0f64, 0);
    for case in 0..100 {
        let n = rng.gen_range(3..=100);
        let tied = case % 2 == 1;
        let draw = |rng: &mut ChaCha8Rng| if tied { rng.gen_range(0..6) as f64 } else { rng.gen_range(-5.0..5.0) };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + draw(&mut rng)).collect();
        if tied {
            ties += 1;
        }
        let (a, b) = (ScoreVector::anonymous(x.clone()).unwrap(), ScoreVector::anonymous(y.clone()).unwrap());
        let mse = x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n as f64;
        worst = worst
            .max((lcc(&a, &b).unwrap() - naive_pearson(&x, &y)).abs())
            .max((srcc(&a, &b).unwrap() - naive_pearson(&naive_ranks(&x), &naive_ranks(&y))).abs())
            .max((mse_scores(&a, &b).unwrap() - mse).abs());
    }
    let detail = format!("worst |lib − brute force| {worst:.2e} (≤ 1e-12) over 100 pairs, {ties} with ties");
    assert!(report(7, "LCC/SRCC/MSE oracle", worst <= 1e-12, &detail, t0.elapsed(), Duration::from_secs(5)));
}

fn cli(args: &[&str], cwd: &Path) {
    let o = Proc::new(env!("CARGO_BIN_EXE_neuroamp")).args(args).current_dir(cwd).output().unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn pipeline(root: &Path) {
    cli(&["--seed", "11", "synth-corpus", "--out", "corpus", "--n-utts", "12"], root);
    cli(&["--seed", "11", "build-targets", "--corpus", "corpus"], root);
    cli(&["--seed", "11", "train", "--corpus", "corpus", "--out", "run", "--epochs", "3", "--lr", "1e-3"], root);
    cli(&["infer", "--model", "run/model.namp", "--corpus", "corpus", "--out", "outputs"], root);
    cli(&["eval", "--corpus", "corpus", "--test-dir", "outputs", "--out", "report"], root);
}

#[test]
fn criterion_8_end_to_end_determinism() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let files = [
        "corpus/manifest.jsonl",
        "corpus/audiograms.json",
        "run/model.namp",
        "run/history.csv",
        "report/report.csv",
        "report/summary.json",
    ];
    let mismatched: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .collect();
    let m = Manifest::load(a.path().join("corpus/manifest.jsonl")).unwrap();
    let wav_mismatch = m
        .entries
        .iter()
        .flat_map(|e| [e.input_path.clone(), e.target_path.clone()])
        .filter(|p| std::fs::read(a.path().join("corpus").join(p)).unwrap() != std::fs::read(b.path().join("corpus").join(p)).unwrap())
        .count();
    let ok = mismatched.is_empty() && wav_mismatch == 0;
    let detail = format!("{} artifacts + {} WAVs compared, differing: {mismatched:?} + {wav_mismatch} WAVs", files.len(), 2 * m.entries.len());
    assert!(report(8, "byte-identical reruns", ok, &detail, t0.elapsed(), Duration::from_secs(1800)));
}
