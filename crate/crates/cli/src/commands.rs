use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use neuralogram::checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint};
use neuralogram::corpus::{export_corpus, make_corpus, CorpusSpec, LabeledClip, SoundClass};
use neuralogram::extract::{extract, Neuralogram, NeuralogramConfig};
use neuralogram::nn::{gradient_check, random_batch, Architecture, Network, NetworkObjective};
use neuralogram::probe::{
    chirp_probe, embedding_size_study, rhythm_probe, sort_rows_by_peak_time_in, ChirpParams, RhythmParams,
};
use neuralogram::render::{render_matrix, Normalize, RenderSpec, Scale};
use neuralogram::rng::seeded;
use neuralogram::signal::{power_spectrogram, StftConfig};
use neuralogram::train::{evaluate, train, FeatureSet, InputSpec, TrainConfig};
use neuralogram::wav::read_wav;
use neuralogram::Matrix;

use crate::runlog::RunLog;
use crate::{
    usage, ArchArg, ChirpArgs, Cli, Command, CorpusArgs, EvalArgs, ExtractArgs, GradcheckArgs, NormalizeArg, RenderArgs,
    RhythmArgs, ScaleArg, StudyArgs, SynthArgs, TrainArgs,
};

/// Desk default embedding size.
const DEFAULT_EMBEDDING: usize = 500;

pub fn run(cli: Cli) -> Result<()> {
    let (name, out) = match &cli.command {
        Command::Synth(a) => ("synth", Some(a.out.join("run.jsonl"))),
        Command::Train(a) => ("train", Some(sibling(&a.out, "run.jsonl"))),
        Command::Eval(a) => ("eval", a.out.as_ref().map(|o| sibling(o, "run.jsonl"))),
        Command::Extract(a) => ("extract", Some(sibling(&a.out, "run.jsonl"))),
        Command::ProbeChirp(a) => ("probe-chirp", Some(sibling(&a.out, "run.jsonl"))),
        Command::ProbeRhythm(a) => ("probe-rhythm", Some(sibling(&a.out, "run.jsonl"))),
        Command::StudyEmbedding(a) => ("study-embedding", Some(a.out.join("run.jsonl"))),
        Command::Render(a) => ("render", Some(sibling(&a.out, "run.jsonl"))),
        Command::Gradcheck(a) => ("gradcheck", a.out.as_ref().map(|o| sibling(o, "run.jsonl"))),
    };
    let log_path = if cli.no_log { None } else { cli.log.clone().or(out) };
    let mut log = RunLog::open(log_path.as_deref(), name).context("opening run log")?;
    log.event("start", json!({ "args": std::env::args().skip(1).collect::<Vec<_>>() }));
    let t = Instant::now();
    let result = match cli.command {
        Command::Synth(a) => synth(a, &mut log),
        Command::Train(a) => train_cmd(a, &mut log),
        Command::Eval(a) => eval(a, &mut log),
        Command::Extract(a) => extract_cmd(a, &mut log),
        Command::ProbeChirp(a) => probe_chirp(a, &mut log),
        Command::ProbeRhythm(a) => probe_rhythm(a, &mut log),
        Command::StudyEmbedding(a) => study(a, &mut log),
        Command::Render(a) => render(a, &mut log),
        Command::Gradcheck(a) => gradcheck(a, &mut log),
    };
    let status = match &result {
        Ok(()) => json!({ "status": "ok", "seconds": t.elapsed().as_secs_f64() }),
        Err(e) => json!({ "status": "error", "error": format!("{e:#}"), "seconds": t.elapsed().as_secs_f64() }),
    };
    log.event("end", status);
    result
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

/// `path` with its extension replaced by `suffix` (e.g. `.curves.csv`).
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    sibling(path, &format!("{stem}{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn emit_json(out: Option<&Path>, value: &impl Serialize, log: &mut RunLog, kind: &str) -> Result<()> {
    match out {
        Some(p) => {
            write_json(p, value)?;
            log.artifact(kind, p);
        }
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn parse_classes(names: &[String]) -> Result<Vec<SoundClass>> {
    names
        .iter()
        .map(|n| {
            SoundClass::from_name(n.trim()).ok_or_else(|| {
                let known: Vec<&str> = SoundClass::ALL.iter().map(|c| c.name()).collect();
                usage(format!("unknown class `{n}` (known: {})", known.join(", ")))
            })
        })
        .collect()
}

fn corpus_spec(args: &CorpusArgs, base: CorpusSpec) -> Result<CorpusSpec> {
    let mut spec = match &args.spec {
        Some(p) => read_json(p)?,
        None => base,
    };
    if let Some(c) = &args.classes {
        spec.classes = parse_classes(c)?;
    }
    if let Some(v) = args.n_clips {
        spec.n_clips = v;
    }
    if let Some(v) = args.clip_dur {
        spec.clip_dur = v;
    }
    if let Some(v) = args.sample_rate {
        spec.sample_rate = v;
    }
    if let Some(v) = args.max_active {
        spec.max_active = v;
    }
    if let Some(v) = args.corpus_seed {
        spec.seed = v;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

/// An exported corpus: class names from the manifest header, clips in
/// manifest order, and the spec if `corpus.json` is present.
struct LoadedCorpus {
    classes: Vec<String>,
    clips: Vec<LabeledClip>,
    spec: Option<CorpusSpec>,
}

fn load_corpus_dir(dir: &Path) -> Result<LoadedCorpus> {
    let manifest = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    if header.len() < 3 || header[0] != "clip_id" || header[1] != "filename" {
        bail!("{}: expected a `clip_id,filename,<classes>` header", manifest.display());
    }
    let classes: Vec<String> = header[2..].iter().map(|s| s.to_string()).collect();
    let rows: Vec<(String, Vec<u8>)> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != header.len() {
                bail!("{}: row `{l}` has {} fields, expected {}", manifest.display(), f.len(), header.len());
            }
            let labels = f[2..].iter().map(|v| v.trim().parse::<u8>()).collect::<Result<Vec<_>, _>>()?;
            Ok((f[1].to_string(), labels))
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        bail!("{} lists no clips", manifest.display());
    }
    let clips = rows
        .into_par_iter()
        .map(|(file, labels)| {
            let wave = read_wav(dir.join(&file)).with_context(|| format!("reading {file}"))?;
            Ok(LabeledClip { wave, labels })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec_path = dir.join("corpus.json");
    let spec = if spec_path.exists() { Some(read_json(&spec_path)?) } else { None };
    Ok(LoadedCorpus { classes, clips, spec })
}

fn synth(a: SynthArgs, log: &mut RunLog) -> Result<()> {
    let spec = corpus_spec(&a.corpus, CorpusSpec::default())?;
    let clips = make_corpus(&spec)?;
    export_corpus(&spec, &clips, &a.out)?;
    write_json(&a.out.join("corpus.json"), &spec)?;
    log.event("corpus", json!({ "clips": clips.len(), "spec": spec }));
    log.artifact("corpus", &a.out);
    eprintln!("wrote {} clips to {}", clips.len(), a.out.display());
    Ok(())
}

/// Training config file: [`TrainConfig`] fields plus the embedding size.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
struct TrainFile {
    #[serde(flatten)]
    train: TrainConfig,
    embedding: usize,
}

impl Default for TrainFile {
    fn default() -> Self {
        TrainFile { train: TrainConfig::default(), embedding: DEFAULT_EMBEDDING }
    }
}

/// Fits input statistics and caches the features of a corpus.
fn features_for(classes: &[String], clips: &[LabeledClip]) -> Result<FeatureSet> {
    let first = &clips[0].wave;
    let base = InputSpec { sample_rate: first.sample_rate(), clip_samples: first.len(), ..InputSpec::desk() };
    if base.feature_shape() != InputSpec::desk().feature_shape() {
        return Err(usage(format!(
            "the desk network needs {:?} spectrograms (2 s at 8 kHz); these clips give {:?}",
            InputSpec::desk().feature_shape(),
            base.feature_shape()
        )));
    }
    if clips.iter().any(|c| c.wave.len() != first.len() || c.wave.sample_rate() != first.sample_rate()) {
        bail!("clips differ in length or sample rate");
    }
    Ok(FeatureSet::build(base, clips, classes)?)
}

fn progress<'a>(log: &'a mut RunLog, label: &str, steps: usize) -> impl FnMut(usize, f64) + 'a {
    let t = Instant::now();
    let label = label.to_string();
    move |step, loss| {
        log.event("step", json!({ "model": label, "step": step, "loss": loss }));
        if (step + 1) % 100 == 0 || step + 1 == steps {
            eprintln!("[{label}] step {}/{steps} loss {loss:.4} ({:.0} s)", step + 1, t.elapsed().as_secs_f64());
        }
    }
}

fn train_cmd(a: TrainArgs, log: &mut RunLog) -> Result<()> {
    let (classes, clips, corpus_seed) = match &a.data {
        Some(dir) => {
            let c = load_corpus_dir(dir)?;
            (c.classes, c.clips, c.spec.map(|s| s.seed))
        }
        None => {
            let spec = corpus_spec(&a.corpus, CorpusSpec::default())?;
            (spec.class_names(), make_corpus(&spec)?, Some(spec.seed))
        }
    };
    let mut cfg: TrainFile = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainFile::default(),
    };
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch {
        cfg.train.batch = v;
    }
    if let Some(v) = a.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.embedding {
        cfg.embedding = v;
    }
    if cfg.train.batch == 0 || cfg.embedding == 0 || !(cfg.train.lr > 0.0) {
        return Err(usage("batch, embedding and lr must be positive"));
    }
    log.event("config", json!({ "train": cfg, "clips": clips.len(), "classes": classes }));
    let features = features_for(&classes, &clips)?;
    drop(clips);
    let arch = Architecture::desk(classes.len(), cfg.embedding);
    let t = Instant::now();
    let outcome = train(&features, arch, &cfg.train, progress(log, "train", cfg.train.steps))?;
    let mut ckpt = outcome.checkpoint;
    ckpt.meta.corpus_seed = corpus_seed;
    ensure_parent(&a.out)?;
    save_checkpoint(&ckpt, &a.out)?;
    log.artifact("checkpoint", &a.out);
    let summary = json!({
        "checkpoint": a.out.display().to_string(),
        "steps": ckpt.meta.steps,
        "initial_loss": ckpt.meta.initial_loss,
        "final_loss": ckpt.meta.final_loss,
        "seconds": t.elapsed().as_secs_f64(),
    });
    log.event("summary", summary.clone());
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn load_ckpt(path: &Path) -> Result<ModelCheckpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn eval(a: EvalArgs, log: &mut RunLog) -> Result<()> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let model_classes = ckpt.meta.classes.clone();
    let (classes, clips) = match &a.data {
        Some(dir) => {
            let c = load_corpus_dir(dir)?;
            (c.classes, c.clips)
        }
        None => {
            let classes = parse_classes(&model_classes).context("checkpoint class list")?;
            let train_seed = ckpt.meta.corpus_seed;
            let base = CorpusSpec {
                classes,
                n_clips: 500,
                seed: train_seed.map_or(43, |s| s.wrapping_add(1)),
                ..CorpusSpec::default()
            };
            let spec = corpus_spec(&a.corpus, base)?;
            if Some(spec.seed) == train_seed {
                eprintln!("warning: held-out seed {} equals the training corpus seed", spec.seed);
            }
            (spec.class_names(), make_corpus(&spec)?)
        }
    };
    if classes != model_classes {
        bail!("held-out classes {classes:?} differ from the model's {model_classes:?}");
    }
    let report = evaluate(&ckpt, &clips)?;
    log.event("eval", json!({ "clips": clips.len(), "mean_auc": report.mean_auc }));
    emit_json(a.out.as_deref(), &report, log, "eval_report")
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn extract_cmd(a: ExtractArgs, log: &mut RunLog) -> Result<()> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let wave = read_wav(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if wave.sample_rate() != ckpt.input.sample_rate {
        eprintln!("warning: resampling {} Hz input to the model's {} Hz", wave.sample_rate(), ckpt.input.sample_rate);
    }
    let cfg = NeuralogramConfig { window_s: a.window.unwrap_or(ckpt.input.window_s()), hop_s: a.hop, layer: a.layer };
    let mut ng = extract(&wave, &ckpt, &cfg)?;
    ng.meta.source = a.input.display().to_string();
    ensure_parent(&a.out)?;
    if is_csv(&a.out) {
        ng.save_csv(&a.out)?;
    } else {
        ng.save_binary(&a.out)?;
    }
    log.artifact("neuralogram", &a.out);
    log.event("extract", json!({ "rows": ng.embedding_size(), "frames": ng.n_frames() }));
    eprintln!("{} x {} Neuralogram written to {}", ng.embedding_size(), ng.n_frames(), a.out.display());
    Ok(())
}

fn probe_chirp(a: ChirpArgs, log: &mut RunLog) -> Result<()> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let mut p: ChirpParams = match &a.config {
        Some(path) => read_json(path)?,
        None => ChirpParams::default(),
    };
    if let Some(v) = a.f_hi {
        p.f_hi = v;
    }
    if let Some(v) = a.f_lo {
        p.f_lo = v;
    }
    if let Some(v) = a.dur {
        p.dur = v;
    }
    if let Some(v) = a.hop {
        p.hop_s = v;
    }
    let (mut report, ng, analysis) = chirp_probe(&ckpt, &p)?;
    let image = with_suffix(&a.out, ".sorted.pgm");
    let matrix = with_suffix(&a.out, ".neuralogram.bin");
    ensure_parent(&a.out)?;
    render_matrix(&analysis.sorted.data, &RenderSpec::default(), &image)?;
    ng.save_binary(&matrix)?;
    report.artifacts.insert("sorted_image".into(), image.display().to_string());
    report.artifacts.insert("neuralogram".into(), matrix.display().to_string());
    report.artifacts.insert("permutation".into(), format!("{:?}", analysis.sorted.permutation));
    write_json(&a.out, &report)?;
    for (kind, path) in [("report", &a.out), ("sorted_image", &image), ("neuralogram", &matrix)] {
        log.artifact(kind, path);
    }
    log.event("report", serde_json::to_value(&report.metrics)?);
    println!("{}", serde_json::to_string_pretty(&json!({ "metrics": report.metrics, "flags": report.flags }))?);
    Ok(())
}

fn probe_rhythm(a: RhythmArgs, log: &mut RunLog) -> Result<()> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let mut p: RhythmParams = match &a.config {
        Some(path) => read_json(path)?,
        None => RhythmParams::default(),
    };
    if let Some(v) = a.p0 {
        p.p0 = v;
    }
    if let Some(v) = a.p1 {
        p.p1 = v;
    }
    if let Some(v) = a.dur {
        p.dur = v;
    }
    if let Some(v) = a.alt_p0 {
        p.alt_p0 = v;
    }
    if let Some(v) = a.hop {
        p.hop_s = v;
    }
    let (mut report, analysis) = rhythm_probe(&ckpt, &p)?;
    let curves = with_suffix(&a.out, ".curves.csv");
    ensure_parent(&a.out)?;
    std::fs::write(&curves, analysis.curves_csv())?;
    report.artifacts.insert("curves".into(), curves.display().to_string());
    write_json(&a.out, &report)?;
    log.artifact("report", &a.out);
    log.artifact("curves", &curves);
    log.event("report", serde_json::to_value(&report.metrics)?);
    println!("{}", serde_json::to_string_pretty(&json!({ "metrics": report.metrics, "flags": report.flags }))?);
    Ok(())
}

fn study(a: StudyArgs, log: &mut RunLog) -> Result<()> {
    if a.sizes.is_empty() {
        return Err(usage("--sizes needs at least one size"));
    }
    let spec = corpus_spec(&a.corpus, CorpusSpec::default())?;
    let mut cfg = TrainConfig::default();
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let clips = make_corpus(&spec)?;
    let features = features_for(&spec.class_names(), &clips)?;
    drop(clips);
    let heldout_spec = CorpusSpec { n_clips: a.heldout, seed: spec.seed.wrapping_add(1), ..spec.clone() };
    let heldout = make_corpus(&heldout_spec).map_err(|e| usage(e.to_string()))?;
    let chirp = ChirpParams { dur: a.chirp_dur, ..ChirpParams::default() };
    let mut cache = BTreeMap::new();
    let t = Instant::now();
    let steps = cfg.steps;
    let rows = embedding_size_study(&features, &heldout, &a.sizes, &cfg, &chirp, &mut cache, |n, step, loss| {
        log.event("step", json!({ "model": format!("desk-{n}"), "step": step, "loss": loss }));
        if (step + 1) % 100 == 0 || step + 1 == steps {
            eprintln!("[desk-{n}] step {}/{steps} loss {loss:.4} ({:.0} s)", step + 1, t.elapsed().as_secs_f64());
        }
    })?;
    std::fs::create_dir_all(&a.out)?;
    for (n, ckpt) in &mut cache {
        ckpt.meta.corpus_seed = Some(spec.seed);
        let path = a.out.join(format!("desk-{n}.nlg"));
        save_checkpoint(ckpt, &path)?;
        log.artifact("checkpoint", &path);
    }
    let mut csv = String::from("embedding_size,mean_auc,chirp_spearman\n");
    for r in &rows {
        let sp = r.chirp_spearman.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(csv, "{},{},{sp}", r.embedding_size, r.mean_auc);
    }
    let csv_path = a.out.join("study.csv");
    std::fs::write(&csv_path, &csv)?;
    log.artifact("table", &csv_path);
    let json_path = a.out.join("study.json");
    write_json(&json_path, &rows)?;
    log.artifact("table", &json_path);
    log.event("study", serde_json::to_value(&rows)?);
    print!("{csv}");
    Ok(())
}

fn render(a: RenderArgs, log: &mut RunLog) -> Result<()> {
    let is_wav = a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    let matrix: Matrix = if is_wav {
        let wave = read_wav(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
        power_spectrogram(&wave, &StftConfig::default())?.data
    } else {
        Neuralogram::load(&a.input).with_context(|| format!("reading {}", a.input.display()))?.data
    };
    let matrix = if a.sort { sort_rows_by_peak_time_in(&matrix, 0..matrix.cols(), f64::NEG_INFINITY).data } else { matrix };
    let spec = RenderSpec {
        scale: match a.scale {
            ScaleArg::Linear => Scale::Linear,
            ScaleArg::Log => Scale::Log,
        },
        floor_db: a.floor_db,
        normalize: match a.normalize {
            NormalizeArg::Global => Normalize::Global,
            NormalizeArg::PerRow => Normalize::PerRow,
        },
        ..RenderSpec::default()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    ensure_parent(&a.out)?;
    render_matrix(&matrix, &spec, &a.out)?;
    log.artifact("image", &a.out);
    eprintln!("{} x {} image written to {}", matrix.cols(), matrix.rows(), a.out.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs, log: &mut RunLog) -> Result<()> {
    if a.samples == 0 || a.batch == 0 || a.classes < 2 || !(a.eps > 0.0) {
        return Err(usage("samples and batch must be positive, classes at least 2, eps > 0"));
    }
    let arch = match a.arch {
        ArchArg::Desk => Architecture::desk(a.classes, a.embedding),
        ArchArg::Deep19 => Architecture::deep19(a.classes, a.divisor),
        ArchArg::Toy => Architecture::toy([1, 24, 20], a.classes),
    };
    let name = arch.name.clone();
    let mut rng = seeded(a.seed);
    let (x, y) = random_batch(arch.input_shape, a.batch, a.classes, &mut rng)?;
    let net = Network::<f64>::init(arch, a.seed)?;
    let params = net.architecture().param_count();
    let mut obj = NetworkObjective::new(net, x, y);
    let t = Instant::now();
    let r = gradient_check(&mut obj, a.samples, a.eps, &mut rng)?;
    let pass = r.max_rel_error < a.tol;
    let report = json!({
        "architecture": name,
        "parameters": params,
        "checked": r.checked,
        "max_rel_error": r.max_rel_error,
        "worst_param": r.worst_param,
        "kink_retries": r.kink_retries,
        "skipped": r.skipped,
        "tol": a.tol,
        "pass": pass,
        "seconds": t.elapsed().as_secs_f64(),
    });
    emit_json(a.out.as_deref(), &report, log, "gradcheck_report")?;
    if !pass {
        bail!("gradient check failed: max relative error {:e} >= {:e}", r.max_rel_error, a.tol);
    }
    Ok(())
}
