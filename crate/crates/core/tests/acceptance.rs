//! Acceptance run: one PASS/FAIL line per criterion, then a nonzero exit if
//! any failed. Criteria 4 to 7 and 9 share the trained desk models, so the
//! whole run takes roughly forty minutes on one core.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use neuralogram::checkpoint::ModelCheckpoint;
use neuralogram::corpus::{make_corpus, CorpusSpec, LabeledClip};
use neuralogram::extract::{extract, Neuralogram, NeuralogramConfig, NeuralogramMeta};
use neuralogram::nn::{
    adam_step, gradient_check, random_batch, AdamConfig, AdamState, Architecture, Network, NetworkObjective, Tensor,
};
use neuralogram::probe::{analyze_chirp, chirp_probe, chirp_signal, rhythm_probe, ChirpParams, RhythmParams};
use neuralogram::rng::seeded;
use neuralogram::signal::{gen_sine, power_spectrogram, StftConfig};
use neuralogram::train::{evaluate, train, FeatureSet, InputSpec, TrainConfig};
use neuralogram::transforms::{apply_matrix, learn_transform, mel_filterbank};
use neuralogram::{Error, Matrix, Result};
use rand::Rng as _;

type Outcome = Result<(bool, String)>;

struct Run {
    results: Vec<(usize, bool)>,
}

impl Run {
    fn check(&mut self, id: usize, name: &str, f: impl FnOnce() -> Outcome) {
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        println!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((id, pass));
    }
}

/// Artifacts of the desk default training run, reused by later criteria.
struct Trained {
    features: FeatureSet,
    heldout: Vec<LabeledClip>,
    model: ModelCheckpoint,
    seconds: f64,
}

fn desk_corpus() -> CorpusSpec {
    CorpusSpec::default()
}

fn c1_spectrogram_shape() -> Outcome {
    let wav = gen_sine(440.0, 2.0, 8000, 0.5)?;
    let t = Instant::now();
    let spec = power_spectrogram(&wav, &StftConfig::default())?;
    let s = t.elapsed().as_secs_f64();
    let shape = (spec.n_bins(), spec.n_frames());
    Ok((shape == (129, 200) && s < 1.0, format!("{}x{} in {s:.4} s (need exactly 129x200, < 1 s)", shape.0, shape.1)))
}

fn c2_gradient_check() -> Outcome {
    let t = Instant::now();
    let arch = Architecture::desk(8, 500);
    let mut rng = seeded(7);
    let (x, y) = random_batch(arch.input_shape, 2, 8, &mut rng)?;
    let mut obj = NetworkObjective::new(Network::<f64>::init(arch, 7)?, x, y);
    let r = gradient_check(&mut obj, 100, 1e-5, &mut rng)?;
    let s = t.elapsed().as_secs_f64();
    Ok((
        r.checked == 100 && r.max_rel_error < 1e-4 && s < 120.0,
        format!(
            "max rel error {:.3e} over {} parameters ({} kink retries) in {s:.1} s (need < 1e-4, < 120 s)",
            r.max_rel_error, r.checked, r.kink_retries
        ),
    ))
}

fn c3_adam_first_step() -> Outcome {
    let lr = AdamConfig::default().lr;
    let mut pass = true;
    let mut parts = Vec::new();
    for g in [1e-6, 1.0, 1e6] {
        let mut p = vec![Tensor::<f64>::zeros(&[1])];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &[Tensor::from_vec(&[1], vec![g])?], &mut st)?;
        let step = p[0].data()[0].abs();
        pass &= (0.999 * lr..=lr).contains(&step);
        parts.push(format!("g={g:e}: |dθ|={step:.6e}"));
    }
    Ok((pass, format!("{} (need [{:.6e}, {lr:.6e}])", parts.join(", "), 0.999 * lr)))
}

fn c4_training(slot: &mut Option<Trained>) -> Outcome {
    let t = Instant::now();
    let spec = desk_corpus();
    let clips = make_corpus(&spec)?;
    let features = FeatureSet::build(InputSpec::desk(), &clips, &spec.class_names())?;
    drop(clips);
    let outcome = train(&features, Architecture::desk(8, 500), &TrainConfig::default(), |_, _| {})?;
    let seconds = t.elapsed().as_secs_f64();
    let heldout = make_corpus(&CorpusSpec { n_clips: 500, seed: spec.seed + 1, ..spec })?;
    let report = evaluate(&outcome.checkpoint, &heldout)?;
    let (init, fin) = (outcome.checkpoint.meta.initial_loss.unwrap(), outcome.checkpoint.meta.final_loss.unwrap());
    let pass = report.mean_auc >= 0.85 && fin < 0.5 * init && seconds <= 1800.0;
    let detail = format!(
        "held-out mean AUC {:.4} (need >= 0.85), loss {init:.4} -> {fin:.4} (need < {:.4}), {:.1} min (need <= 30)",
        report.mean_auc,
        0.5 * init,
        seconds / 60.0
    );
    *slot = Some(Trained { features, heldout, model: outcome.checkpoint, seconds });
    Ok((pass, detail))
}

fn diagonal_fixture() -> (Neuralogram, f64) {
    let (hop, win, half) = (0.5, 2.0, 30.0);
    let n_down = ((half - win) / hop) as usize + 1;
    let total = ((2.0 * half - win) / hop) as usize + 1;
    let up_start = (half / hop) as usize;
    let m = Matrix::from_fn(n_down, total, |r, c| (c == r || c == up_start + (n_down - 1 - r)) as u8 as f64);
    let meta = NeuralogramMeta { hop_s: hop, window_s: win, layer: 0, sample_rate: 8000, resampled_from: None, source: String::new() };
    (Neuralogram { data: m, meta }, half)
}

fn c5_chirp(trained: &Trained) -> Outcome {
    let t = Instant::now();
    let (report, _, a) = chirp_probe(&trained.model, &ChirpParams::default())?;
    let (fixture, half) = diagonal_fixture();
    let oracle = analyze_chirp(&fixture, 4000.0, 1.0, half, 0.5).spearman;
    let s = t.elapsed().as_secs_f64();
    let sp = a.spearman.unwrap_or(f64::NAN);
    let pass = sp >= 0.8 && a.active_fraction > 0.05 && a.active_fraction < 0.9 && oracle == Some(1.0) && s <= 300.0;
    Ok((
        pass,
        format!(
            "Spearman {sp:.4} (need >= 0.8), R² {:.4}, active fraction {:.4} (need in (0.05, 0.9)), diagonal fixture Spearman {:?} (need 1.0), flags {:?}, {s:.1} s (need <= 300)",
            a.r_squared.unwrap_or(f64::NAN),
            a.active_fraction,
            oracle,
            report.flags
        ),
    ))
}

fn c6_rhythm(trained: &Trained) -> Outcome {
    let t = Instant::now();
    let p = RhythmParams { p0: 0.1, alt_p0: 0.2, p1: 0.001, dur: 300.0, ..RhythmParams::default() };
    let (report, a) = rhythm_probe(&trained.model, &p)?;
    let s = t.elapsed().as_secs_f64();
    let bins = a.cutoff_difference_bins();
    let hz = |i: usize| a.runs[i].cutoff.cutoff_hz.map_or("undefined".into(), |v| format!("{v:.2} Hz"));
    Ok((
        bins.is_some_and(|b| b <= 2.0) && s <= 600.0,
        format!(
            "cutoff {} (p0 100 ms) vs {} (p0 200 ms), difference {} bins (need <= 2), {} rhythm rows, flags {:?}, {s:.1} s (need <= 600)",
            hz(0),
            hz(1),
            bins.map_or("undefined".into(), |b| format!("{b:.3}")),
            a.rhythm_rows.len(),
            report.flags
        ),
    ))
}

fn c7_embedding_size(trained: &Trained) -> Outcome {
    let t = Instant::now();
    let big = train(&trained.features, Architecture::desk(8, 2000), &TrainConfig::default(), |_, _| {})?.checkpoint;
    let seconds = t.elapsed().as_secs_f64() + trained.seconds;
    let auc_big = evaluate(&big, &trained.heldout)?.mean_auc;
    let auc_small = evaluate(&trained.model, &trained.heldout)?.mean_auc;
    let diff = (auc_big - auc_small).abs();
    Ok((
        diff <= 0.05 && seconds <= 3600.0,
        format!(
            "AUC(N=2000) {auc_big:.4}, AUC(N=500) {auc_small:.4}, |difference| {diff:.4} (need <= 0.05), both trainings {:.1} min (need <= 60)",
            seconds / 60.0
        ),
    ))
}

fn c8_transform_recovery() -> Outcome {
    let t = Instant::now();
    let mel = mel_filterbank(40, 129, 8000)?;
    let mut rng = seeded(8);
    let inputs: Vec<Vec<f64>> = (0..500).map(|_| (0..129).map(|_| rng.random::<f64>()).collect()).collect();
    let targets = apply_matrix(&mel, &Matrix::from_columns(&inputs)?)?;
    let targets: Vec<Vec<f64>> = (0..500).map(|c| targets.column(c)).collect();
    let learned = learn_transform(&inputs, &targets, 0.0)?;
    let diff = Matrix::from_fn(40, 129, |r, c| learned.matrix.get(r, c) - mel.matrix.get(r, c));
    let err = diff.frobenius_norm() / mel.matrix.frobenius_norm();
    let s = t.elapsed().as_secs_f64();
    Ok((err < 1e-6 && s < 10.0, format!("relative Frobenius error {err:.3e} (need < 1e-6) in {s:.2} s (need < 10)")))
}

fn c9_determinism(trained: &Trained) -> Outcome {
    let t = Instant::now();
    let again = train(&trained.features, Architecture::desk(8, 500), &TrainConfig::default(), |_, _| {})?.checkpoint;
    let same_ckpt = again.to_bytes()? == trained.model.to_bytes()?;
    let wave = chirp_signal(&ChirpParams { dur: 30.0, ..ChirpParams::default() }, 8000)?;
    let cfg = NeuralogramConfig::default();
    let a = extract(&wave, &trained.model, &cfg)?.to_bytes()?;
    let b = extract(&wave, &trained.model, &cfg)?.to_bytes()?;
    let s = t.elapsed().as_secs_f64();
    Ok((
        same_ckpt && a == b && s < 2100.0,
        format!(
            "retrained checkpoint bit-identical: {same_ckpt}, repeated extraction bit-identical: {}, {:.1} min (need < 35)",
            a == b,
            s / 60.0
        ),
    ))
}

fn rewrite_header(bytes: &[u8], f: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut v: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
    f(&mut v);
    let h = serde_json::to_vec(&v).unwrap();
    let mut out = bytes[..8].to_vec();
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&bytes[16 + len..]);
    out
}

fn c10_round_trips(trained: Option<&Trained>) -> Outcome {
    let model = match trained {
        Some(t) => t.model.clone(),
        None => {
            let net = Network::<f32>::init(Architecture::desk(8, 500), 1)?;
            ModelCheckpoint::new(net, InputSpec::desk(), Default::default())?
        }
    };
    let bytes = model.to_bytes()?;
    let back = ModelCheckpoint::from_bytes(&bytes)?;
    let bits = |m: &ModelCheckpoint| -> Vec<u32> { m.net.params().iter().flat_map(|p| p.data().iter().map(|v| v.to_bits())).collect() };
    let ckpt_ok = back.to_bytes()? == bytes && bits(&back) == bits(&model) && back.meta == model.meta;

    let wave = gen_sine(440.0, 4.0, 8000, 0.5)?;
    let ng = extract(&wave, &model, &NeuralogramConfig::default())?;
    let nb = ng.to_bytes()?;
    let ng_ok = Neuralogram::from_bytes(&nb)?.to_bytes()? == nb && Neuralogram::from_csv(&ng.to_csv())?.to_bytes()? == nb;

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let fixtures = [
        ("bad magic", matches!(ModelCheckpoint::from_bytes(&bad_magic), Err(Error::Format(_)))),
        (
            "version 2",
            matches!(
                ModelCheckpoint::from_bytes(&rewrite_header(&bytes, |h| h["format_version"] = 2.into())),
                Err(Error::Version { found: 2, .. })
            ),
        ),
        ("truncated", matches!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 5]), Err(Error::Truncated(_)))),
        (
            "shape product vs payload",
            matches!(
                ModelCheckpoint::from_bytes(&rewrite_header(&bytes, |h| h["tensors"][0]["shape"][0] = 99.into())),
                Err(Error::Integrity(_))
            ),
        ),
        ("neuralogram bad magic", matches!(Neuralogram::from_bytes(&bytes), Err(Error::Format(_)))),
        ("neuralogram truncated", matches!(Neuralogram::from_bytes(&nb[..nb.len() - 2]), Err(Error::Truncated(_) | Error::Integrity(_)))),
    ];
    let failed: Vec<&str> = fixtures.iter().filter(|f| !f.1).map(|f| f.0).collect();
    Ok((
        ckpt_ok && ng_ok && failed.is_empty(),
        format!(
            "checkpoint round trip exact: {ckpt_ok}, neuralogram binary/CSV round trip exact: {ng_ok}, corrupted fixtures {}/{} mapped to their error classes{}",
            fixtures.len() - failed.len(),
            fixtures.len(),
            if failed.is_empty() { String::new() } else { format!(" (wrong: {failed:?})") }
        ),
    ))
}

fn main() {
    // Plain `cargo test` runs everything; a name filter that does not
    // match `acceptance` (e.g. `cargo test gradient`) skips this long run.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let mut run = Run { results: Vec::new() };
    let mut trained = None;
    run.check(1, "spectrogram shape", c1_spectrogram_shape);
    run.check(2, "desk gradient check", c2_gradient_check);
    run.check(3, "Adam first-step magnitude", c3_adam_first_step);
    run.check(4, "desk training gate", || c4_training(&mut trained));
    let need = |t: &Option<Trained>| -> Result<()> {
        t.as_ref().map(|_| ()).ok_or_else(|| Error::InvalidArgument("no trained desk model (criterion 4 failed to run)".into()))
    };
    run.check(5, "chirp probe", || {
        need(&trained)?;
        c5_chirp(trained.as_ref().unwrap())
    });
    run.check(6, "rhythm probe start-period invariance", || {
        need(&trained)?;
        c6_rhythm(trained.as_ref().unwrap())
    });
    run.check(7, "embedding-size study", || {
        need(&trained)?;
        c7_embedding_size(trained.as_ref().unwrap())
    });
    run.check(8, "mel transform recovery", c8_transform_recovery);
    run.check(9, "determinism", || {
        need(&trained)?;
        c9_determinism(trained.as_ref().unwrap())
    });
    run.check(10, "round trips and corrupted headers", || c10_round_trips(trained.as_ref()));

    let failed: Vec<usize> = run.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed {:?}", run.results.len() - failed.len(), failed.len(), failed);
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
