use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use neuroamp::dataset::{
    audiogram_bank, build_targets, load_split, mix_at_snr, save_audiograms, synth_corpus, Condition, Manifest,
    ManifestEntry, PairingMode, Split, AUDIOGRAM_FILE, MANIFEST_FILE,
};
use neuroamp::metrics::{band_energy, effective_gain, BandEnergyTrack, EvalItem, EvalReport, EvalRow};
use neuroamp::nn::{infer, load_model, save_model, train, AmpModel, ModelConfig};
use neuroamp::par::par_map;
use neuroamp::prescription::{apply_linear_gain, load_audiograms, nalr_gains, Audiogram, AUDIOGRAM_FREQS_HZ};
use neuroamp::signal::{read_wav, stft, write_wav, WaveBuffer};
use neuroamp::wdrc::amplify_reference;
use serde_json::json;

use crate::{
    AmplifyArgs, AnalyzeArgs, AnchorArg, BuildTargetsArgs, Cli, CliError, Command, EvalArgs, InferArgs, MixArgs,
    ModeArg, PrescribeArgs, RunConfig, SynthArgs, TrainArgs,
};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const MODEL_FILE: &str = "model.namp";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.json";

type Res<T = ()> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("i/o failure on {}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Res {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Res {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(d)?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> Res<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| CliError::Internal(e.to_string()))
}

/// Fold command-line overrides into the configuration.
pub fn resolve_config(cli: &Cli) -> Res<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    match &cli.command {
        Command::SynthCorpus(a) => {
            if let Some(n) = a.n_utts {
                cfg.synth.n_utts = n;
            }
            if a.n_val.is_some() {
                cfg.synth.n_val = a.n_val;
            }
            if a.n_test.is_some() {
                cfg.synth.n_test = a.n_test;
            }
        }
        Command::BuildTargets(a) => {
            if let Some(m) = a.mode {
                cfg.targets.mode = match m {
                    ModeArg::NeuroAmp => PairingMode::NeuroAmp,
                    ModeArg::Denoising => PairingMode::Denoising,
                };
            }
            if let Some(k) = a.per_utt {
                cfg.targets.per_utt = k;
            }
            if let Some(n) = a.n_audiograms {
                cfg.targets.n_audiograms = n;
            }
        }
        Command::Train(a) => {
            let arch = a.arch.map(Into::into).unwrap_or(cfg.model.arch);
            if a.paper_scale {
                cfg.model = ModelConfig::paper_scale(arch);
            } else if a.arch.is_some() {
                cfg.model = ModelConfig::desk(arch);
            }
            if let Some(e) = a.epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(lr) = a.lr {
                cfg.train.lr = lr;
            }
            if let Some(b) = a.batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(p) = a.patience {
                cfg.train.early_stop_patience = p;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Where a command's resolved configuration is written.
fn run_dir(cli: &Cli) -> Option<PathBuf> {
    if let Some(d) = &cli.run_dir {
        return Some(d.clone());
    }
    let parent = |p: &Path| Some(p.parent().map(Path::to_path_buf).unwrap_or_default());
    match &cli.command {
        Command::Prescribe(a) => a.out.as_deref().and_then(parent),
        Command::Amplify(a) => parent(&a.out),
        Command::Mix(a) => parent(&a.out),
        Command::SynthCorpus(a) => Some(a.out.clone()),
        Command::BuildTargets(a) => Some(a.corpus.clone()),
        Command::Train(a) => Some(a.out.clone()),
        Command::Infer(a) if a.corpus.is_some() => Some(a.out.clone()),
        Command::Infer(a) => parent(&a.out),
        Command::Eval(a) => Some(a.out.clone()),
        Command::Analyze(a) => Some(a.out.clone()),
    }
}

pub fn run(cli: Cli) -> Res {
    let cfg = resolve_config(&cli)?;
    if let Some(dir) = run_dir(&cli) {
        let doc = json!({ "command": cli.command.name(), "invocation": &cli.command, "config": &cfg });
        write_text(&dir.join(RESOLVED_CONFIG_FILE), &to_json(&doc)?)?;
    }
    match &cli.command {
        Command::Prescribe(a) => prescribe(a),
        Command::Amplify(a) => amplify(a, &cfg),
        Command::SynthCorpus(a) => synth(a, &cfg),
        Command::Mix(a) => mix(a, &cfg),
        Command::BuildTargets(a) => targets(a, &cfg),
        Command::Train(a) => train_cmd(a, &cfg),
        Command::Infer(a) => infer_cmd(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::Analyze(a) => analyze(a, &cfg),
    }
}

fn pick_audiogram(path: &Path, id: Option<&str>) -> Res<Audiogram> {
    let all = load_audiograms(path)?;
    match id {
        Some(id) => all
            .into_iter()
            .find(|a| a.id() == id)
            .ok_or_else(|| CliError::Data(format!("no audiogram `{id}` in {}", path.display()))),
        None => all.into_iter().next().ok_or_else(|| CliError::Data(format!("{} holds no audiograms", path.display()))),
    }
}

fn write_wave<T: neuroamp::Real>(path: &Path, wave: &WaveBuffer<T>) -> Res {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(d)?;
    }
    write_wav(path, wave)?;
    Ok(())
}

fn prescribe(a: &PrescribeArgs) -> Res {
    let text = std::fs::read_to_string(&a.audiogram).map_err(|e| io_err(&a.audiogram, e))?;
    let batch = text.trim_start().starts_with('[');
    let rows: Vec<_> = load_audiograms(&a.audiogram)?
        .iter()
        .map(|aud| json!({ "id": aud.id(), "frequencies_hz": AUDIOGRAM_FREQS_HZ, "gains_db": nalr_gains(aud).gains_db }))
        .collect();
    let out = if batch { to_json(&rows)? } else { to_json(&rows[0])? };
    print!("{out}");
    if let Some(p) = &a.out {
        write_text(p, &out)?;
    }
    Ok(())
}

fn amplify(a: &AmplifyArgs, cfg: &RunConfig) -> Res {
    let aud = pick_audiogram(&a.audiogram, a.audiogram_id.as_deref())?;
    let wave: WaveBuffer<f64> = read_wav(&a.input)?;
    wave.ensure_pipeline_rate()?;
    let out = if a.linear_only {
        apply_linear_gain(&wave, &nalr_gains(&aud), &cfg.stft)?
    } else {
        amplify_reference(&wave, &aud, &cfg.compressor, &cfg.stft)?.wave
    };
    write_wave(&a.out, &out)
}

fn synth(a: &SynthArgs, cfg: &RunConfig) -> Res {
    let m = synth_corpus(&cfg.synth, cfg.seed, &a.out, cfg.jobs)?;
    info!("wrote {} manifest entries under {}", m.entries.len(), a.out.display());
    Ok(())
}

fn mix(a: &MixArgs, cfg: &RunConfig) -> Res {
    let clean: WaveBuffer<f64> = read_wav(&a.clean)?;
    let noise: WaveBuffer<f64> = read_wav(&a.noise)?;
    let m = mix_at_snr(&clean, &noise, a.snr_db, cfg.seed)?;
    write_wave(&a.out, &m.wave)?;
    print!("{}", to_json(&json!({ "noise_scale": m.noise_scale, "peak_scale": m.peak_scale }))?);
    Ok(())
}

fn targets(a: &BuildTargetsArgs, cfg: &RunConfig) -> Res {
    let manifest = Manifest::load(a.corpus.join(MANIFEST_FILE))?;
    let bank = match &a.audiograms {
        Some(p) => load_audiograms(p)?,
        None => audiogram_bank(&cfg.targets.patterns, cfg.targets.n_audiograms, cfg.seed)?,
    };
    let built = build_targets(&manifest, &bank, &cfg.compressor, &cfg.stft, cfg.targets.mode, cfg.targets.per_utt, cfg.jobs)?;
    save_audiograms(a.corpus.join(AUDIOGRAM_FILE), &bank)?;
    built.manifest.save(a.corpus.join(MANIFEST_FILE))?;
    info!("{} pairs, {} clipped target samples", built.manifest.entries.len(), built.clipped_samples);
    Ok(())
}

fn corpus_audiograms(corpus: &Path) -> Res<HashMap<String, Audiogram>> {
    Ok(load_audiograms(corpus.join(AUDIOGRAM_FILE))?.into_iter().map(|a| (a.id().to_string(), a)).collect())
}

fn train_cmd(a: &TrainArgs, cfg: &RunConfig) -> Res {
    let manifest = Manifest::load(a.corpus.join(MANIFEST_FILE))?;
    let auds = corpus_audiograms(&a.corpus)?;
    let train_set = load_split::<f32>(&manifest, Split::Train, &auds, &cfg.stft)?;
    let val_set = load_split::<f32>(&manifest, Split::Val, &auds, &cfg.stft)?;
    let mut model = AmpModel::<f32>::new(cfg.model.clone(), cfg.seed)?;
    info!("{} parameters, {} training / {} validation pairs", model.n_params(), train_set.len(), val_set.len());
    let history = train(&mut model, &train_set, &val_set, &cfg.train, |r| {
        info!("epoch {:>3}  train {:.5}  val {:.5}", r.epoch, r.train_loss, r.val_loss);
    })?;
    create_dir(&a.out)?;
    save_model(&model, a.out.join(MODEL_FILE))?;
    history.write_csv(a.out.join(HISTORY_FILE))?;
    let best = &history.records[history.best_epoch - 1];
    let summary = json!({
        "n_params": model.n_params(),
        "epochs_run": history.records.len(),
        "best_epoch": history.best_epoch,
        "best_val_loss": best.val_loss,
        "stopped_early": history.stopped_early,
    });
    print!("{}", to_json(&summary)?);
    Ok(())
}

/// File name of a system output for a corpus pairing.
pub fn output_name(e: &ManifestEntry) -> String {
    format!("{}__{}.wav", e.utt_id, e.audiogram_id)
}

fn infer_cmd(a: &InferArgs, cfg: &RunConfig) -> Res {
    let model: AmpModel<f32> = load_model(&a.model)?;
    if let Some(corpus) = &a.corpus {
        let manifest = Manifest::load(corpus.join(MANIFEST_FILE))?;
        let auds = corpus_audiograms(corpus)?;
        let split: Split = a.split.into();
        let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
        if entries.is_empty() {
            return Err(neuroamp::Error::EmptySplit(format!("{split:?}").to_lowercase()).into());
        }
        create_dir(&a.out)?;
        par_map(&entries, cfg.jobs, |e| -> Res {
            let aud = auds
                .get(&e.audiogram_id)
                .ok_or_else(|| CliError::Data(format!("`{}` has no known audiogram; run build-targets", e.utt_id)))?;
            let wave: WaveBuffer<f32> = read_wav(manifest.resolve(&e.input_path))?;
            write_wave(&a.out.join(output_name(e)), &infer(&model, &wave, aud, &cfg.stft)?)
        })
        .into_iter()
        .collect::<Res<Vec<()>>>()?;
        info!("wrote {} outputs to {}", entries.len(), a.out.display());
        return Ok(());
    }
    let (Some(input), Some(aud_path)) = (&a.input, &a.audiogram) else {
        return Err(CliError::Usage("infer needs either --corpus or both --in and --audiogram".into()));
    };
    let aud = pick_audiogram(aud_path, a.audiogram_id.as_deref())?;
    let wave: WaveBuffer<f32> = read_wav(input)?;
    write_wave(&a.out, &infer(&model, &wave, &aud, &cfg.stft)?)
}

fn wav_names(dir: &Path) -> Res<Vec<String>> {
    let mut names = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let name = e.map_err(|e| io_err(dir, e))?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".wav") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn load(path: &Path) -> Res<WaveBuffer<f64>> {
    if !path.is_file() {
        return Err(neuroamp::Error::MissingAudio(path.to_path_buf()).into());
    }
    Ok(read_wav(path)?)
}

fn condition_name(c: Condition) -> &'static str {
    match c {
        Condition::Clean => "clean",
        Condition::Noisy => "noisy",
        Condition::Enhanced => "enhanced",
    }
}

fn eval_items(a: &EvalArgs) -> Res<Vec<EvalItem>> {
    let mut items = Vec::new();
    if let Some(corpus) = &a.corpus {
        let manifest = Manifest::load(corpus.join(MANIFEST_FILE))?;
        for e in manifest.split(a.split.into()) {
            if e.target_path.is_empty() {
                return Err(CliError::Data(format!("`{}` has no target; run build-targets", e.utt_id)));
            }
            let reference = load(&manifest.resolve(&e.target_path))?;
            let anchor = match a.anchor {
                AnchorArg::Input => load(&manifest.resolve(&e.input_path))?,
                AnchorArg::Clean => load(&manifest.resolve(&e.clean_path))?,
                AnchorArg::Reference => reference.clone(),
            };
            let name = output_name(e);
            items.push(EvalItem {
                utt_id: name.trim_end_matches(".wav").to_string(),
                condition: condition_name(e.condition).to_string(),
                anchor,
                reference,
                test: load(&a.test_dir.join(&name))?,
            });
        }
    } else if let Some(ref_dir) = &a.ref_dir {
        for name in wav_names(&a.test_dir)? {
            let reference = load(&ref_dir.join(&name))?;
            let anchor = match &a.anchor_dir {
                Some(d) => load(&d.join(&name))?,
                None => reference.clone(),
            };
            let stem = name.trim_end_matches(".wav").to_string();
            let condition = if stem.contains("_snr") { "noisy" } else { "clean" };
            items.push(EvalItem { utt_id: stem, condition: condition.into(), anchor, reference, test: load(&a.test_dir.join(&name))? });
        }
    }
    if items.is_empty() {
        return Err(CliError::Data("nothing to evaluate".into()));
    }
    Ok(items)
}

fn mean(rows: &[EvalRow], f: impl Fn(&EvalRow) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

fn eval(a: &EvalArgs, cfg: &RunConfig) -> Res {
    let items = eval_items(a)?;
    let report = EvalReport::evaluate(&items, &cfg.stft, cfg.jobs)?;
    create_dir(&a.out)?;
    report.write_csv(a.out.join(REPORT_FILE))?;
    let agreement = report.summary()?;
    let means = |rows: &[EvalRow]| {
        json!({
            "lsd_db": mean(rows, |r| r.lsd_db),
            "seg_snr_db": mean(rows, |r| r.seg_snr_db),
            "band_energy_mse": mean(rows, |r| r.band_energy_mse),
        })
    };
    let summary = json!({
        "n_utterances": report.rows.len(),
        "test_mean": means(&report.rows),
        "reference_mean": means(&report.reference_rows),
        "agreement": agreement,
    });
    write_text(&a.out.join(SUMMARY_FILE), &to_json(&summary)?)?;
    print!("{}", to_json(&summary)?);
    Ok(())
}

fn analyze(a: &AnalyzeArgs, cfg: &RunConfig) -> Res {
    let input = load(&a.input)?;
    let mut signals: Vec<(&str, WaveBuffer<f64>)> = vec![("input", input.clone())];
    if let Some(p) = &a.processed {
        signals.push(("processed", load(p)?));
    }
    if let Some(p) = &a.audiogram {
        let aud = pick_audiogram(p, a.audiogram_id.as_deref())?;
        signals.push(("nalr", apply_linear_gain(&input, &nalr_gains(&aud), &cfg.stft)?));
        signals.push(("nalr_wdrc", amplify_reference(&input, &aud, &cfg.compressor, &cfg.stft)?.wave));
    }
    let tracks = signals
        .iter()
        .map(|(_, w)| Ok(band_energy(&stft(w, &cfg.stft)?.magnitude())))
        .collect::<Res<Vec<BandEnergyTrack>>>()?;
    let mut csv = String::from("frame");
    for (name, _) in &signals {
        csv.push_str(&format!(",{name}_low_db,{name}_mid_db,{name}_high_db"));
    }
    csv.push('\n');
    for t in 0..tracks[0].len() {
        csv.push_str(&t.to_string());
        for tr in &tracks {
            csv.push_str(&format!(",{},{},{}", tr.low[t], tr.mid[t], tr.high[t]));
        }
        csv.push('\n');
    }
    create_dir(&a.out)?;
    write_text(&a.out.join("band_energy.csv"), &csv)?;

    let mut curves: Vec<(String, [f64; 6])> = Vec::new();
    for (name, w) in signals.iter().skip(1) {
        curves.push((format!("{name}_gain_db"), effective_gain(&input, w, &cfg.stft)?));
    }
    if let Some(p) = &a.audiogram {
        let aud = pick_audiogram(p, a.audiogram_id.as_deref())?;
        curves.push(("nalr_prescribed_db".into(), nalr_gains(&aud).gains_db));
    }
    let mut g = String::from("freq_hz");
    for (name, _) in &curves {
        g.push(',');
        g.push_str(name);
    }
    g.push('\n');
    for (i, f) in AUDIOGRAM_FREQS_HZ.iter().enumerate() {
        g.push_str(&f.to_string());
        for (_, c) in &curves {
            g.push_str(&format!(",{}", c[i]));
        }
        g.push('\n');
    }
    write_text(&a.out.join("gains.csv"), &g)
}
