//! Network input features, training and evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{ModelCheckpoint, TrainingMeta};
use crate::corpus::LabeledClip;
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Architecture, Network, Tensor};
use crate::rng::{stream, stream_rng};
use crate::signal::{Stft, StftConfig, Waveform};

/// How a waveform becomes network input: a power spectrogram, then
/// `(log10(power + log_floor) − mean) / std`.
///
/// `mean` and `std` are measured on the training corpus and stored with the
/// model, so inference reproduces training-time scaling exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub sample_rate: u32,
    pub clip_samples: usize,
    pub stft: StftConfig,
    pub log_floor: f64,
    pub mean: f64,
    pub std: f64,
}

pub const LOG_FLOOR: f64 = 1e-6;

impl InputSpec {
    /// Unnormalised spec (mean 0, std 1) for 2 s clips at 8 kHz.
    pub fn desk() -> Self {
        InputSpec {
            sample_rate: 8000,
            clip_samples: 16000,
            stft: StftConfig::default(),
            log_floor: LOG_FLOOR,
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn window_s(&self) -> f64 {
        self.clip_samples as f64 / self.sample_rate as f64
    }

    pub fn featurizer(&self) -> Result<Featurizer> {
        Ok(Featurizer { spec: *self, stft: Stft::new(self.stft, self.sample_rate)? })
    }

    /// `[1, n_bins, n_frames]` shape produced for one clip.
    pub fn feature_shape(&self) -> [usize; 3] {
        [1, self.stft.n_bins(), self.stft.frame_count(self.clip_samples, self.sample_rate)]
    }
}

/// An [`InputSpec`] with a ready FFT plan.
pub struct Featurizer {
    spec: InputSpec,
    stft: Stft,
}

impl Featurizer {
    pub fn spec(&self) -> &InputSpec {
        &self.spec
    }

    fn log_power(&self, wav: &Waveform) -> Result<Vec<f64>> {
        if wav.sample_rate() != self.spec.sample_rate {
            return Err(Error::invalid(format!(
                "clip is at {} Hz, model expects {} Hz",
                wav.sample_rate(),
                self.spec.sample_rate
            )));
        }
        if wav.len() != self.spec.clip_samples {
            return Err(Error::shape(format!(
                "clip has {} samples, model expects {}",
                wav.len(),
                self.spec.clip_samples
            )));
        }
        let spec = self.stft.power(wav)?;
        Ok(spec.data.into_data().into_iter().map(|p| (p + self.spec.log_floor).log10()).collect())
    }

    /// Normalised features, row-major `n_bins × n_frames`.
    pub fn features(&self, wav: &Waveform) -> Result<Vec<f32>> {
        let (mean, std) = (self.spec.mean, self.spec.std);
        Ok(self.log_power(wav)?.into_iter().map(|v| ((v - mean) / std) as f32).collect())
    }
}

/// Mean and standard deviation of log-power over every bin of every clip,
/// accumulated in clip order.
pub fn fit_input_stats(spec: InputSpec, clips: &[LabeledClip]) -> Result<InputSpec> {
    let f = spec.featurizer()?;
    let sums: Vec<(f64, f64, usize)> = clips
        .par_iter()
        .map(|c| {
            let v = f.log_power(&c.wave)?;
            Ok((v.iter().sum(), v.iter().map(|x| x * x).sum(), v.len()))
        })
        .collect::<Result<_>>()?;
    let (mut s, mut ss, mut n) = (0.0, 0.0, 0usize);
    for (a, b, c) in sums {
        s += a;
        ss += b;
        n += c;
    }
    let mean = s / n as f64;
    let var = (ss / n as f64 - mean * mean).max(0.0);
    Ok(InputSpec { mean, std: var.sqrt().max(1e-12), ..spec })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-3, batch: 16, steps: 3000, seed: 42 }
    }
}

/// Steps averaged for the "initial" loss.
pub const INITIAL_LOSS_WINDOW: usize = 10;
/// Steps averaged for the smoothed final loss.
pub const FINAL_LOSS_WINDOW: usize = 100;
/// Loss-history tail stored in checkpoints.
pub const HISTORY_TAIL: usize = 100;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn initial_loss(history: &[f64]) -> Option<f64> {
    (!history.is_empty()).then(|| mean(&history[..history.len().min(INITIAL_LOSS_WINDOW)]))
}

pub fn final_smoothed_loss(history: &[f64]) -> Option<f64> {
    (!history.is_empty()).then(|| mean(&history[history.len().saturating_sub(FINAL_LOSS_WINDOW)..]))
}

pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub loss_history: Vec<f64>,
}

/// Spectrogram features of a corpus, cached once for training.
pub struct FeatureSet {
    pub input: InputSpec,
    pub classes: Vec<String>,
    item_len: usize,
    data: Vec<f32>,
    labels: Vec<f32>,
    n_classes: usize,
}

impl FeatureSet {
    /// Fits normalisation on `clips` and computes their features.
    pub fn build(base: InputSpec, clips: &[LabeledClip], classes: &[String]) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::invalid("corpus is empty"));
        }
        let input = fit_input_stats(base, clips)?;
        let f = input.featurizer()?;
        let n_classes = clips[0].labels.len();
        if classes.len() != n_classes || clips.iter().any(|c| c.labels.len() != n_classes) {
            return Err(Error::shape("clips disagree on the number of classes"));
        }
        let feats: Vec<Vec<f32>> = clips.par_iter().map(|c| f.features(&c.wave)).collect::<Result<_>>()?;
        let item_len = feats[0].len();
        Ok(FeatureSet {
            input,
            classes: classes.to_vec(),
            item_len,
            data: feats.concat(),
            labels: clips.iter().flat_map(|c| c.labels.iter().map(|&l| l as f32)).collect(),
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.item_len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let shape = self.input.feature_shape();
        let items: Vec<&[f32]> = idx.iter().map(|&i| &self.data[i * self.item_len..(i + 1) * self.item_len]).collect();
        let x = Tensor::stack(&items, &shape)?;
        let k = self.n_classes;
        let ys: Vec<&[f32]> = idx.iter().map(|&i| &self.labels[i * k..(i + 1) * k]).collect();
        Ok((x, Tensor::stack(&ys, &[k])?))
    }
}

/// Minibatch index stream: consecutive slices of per-epoch permutations
/// drawn from the `SHUFFLE` stream.
struct Batches {
    n: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    fn next(&mut self, size: usize) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(&mut stream_rng(self.seed, stream::SHUFFLE, self.epoch));
                self.epoch += 1;
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains `arch` with Adam on shuffled minibatches, dropout active.
///
/// The loop is single-threaded, so a fixed seed gives bit-identical
/// parameters and loss history. `on_step(step, loss)` is called after every
/// update.
pub fn train(
    features: &FeatureSet,
    arch: Architecture,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    if features.is_empty() {
        return Err(Error::invalid("corpus is empty"));
    }
    if cfg.batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if arch.input_shape != features.input.feature_shape() {
        return Err(Error::shape(format!(
            "architecture expects input {:?}, features are {:?}",
            arch.input_shape,
            features.input.feature_shape()
        )));
    }
    if arch.n_classes() != features.n_classes {
        return Err(Error::shape(format!(
            "architecture has {} outputs, corpus has {} classes",
            arch.n_classes(),
            features.n_classes
        )));
    }
    let mut net = Network::<f32>::init(arch, cfg.seed)?;
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, net.params());
    let mut dropout_rng = stream_rng(cfg.seed, stream::DROPOUT, 0);
    let mut batches = Batches { n: features.len(), seed: cfg.seed, epoch: 0, order: Vec::new(), pos: 0 };
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (x, y) = features.batch(&batches.next(cfg.batch))?;
        let (loss, grads) = match net.loss_and_grad(&x, &y, Some(&mut dropout_rng)) {
            Ok(r) => r,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        adam_step(net.params_mut(), &grads, &mut adam)?;
        history.push(loss);
        on_step(step, loss);
    }
    let meta = TrainingMeta {
        seed: cfg.seed,
        steps: cfg.steps,
        lr: cfg.lr,
        batch: cfg.batch,
        initial_loss: initial_loss(&history),
        final_loss: final_smoothed_loss(&history),
        loss_history_tail: history[history.len().saturating_sub(HISTORY_TAIL)..].to_vec(),
        classes: features.classes.clone(),
        ..TrainingMeta::default()
    };
    Ok(TrainOutcome { checkpoint: ModelCheckpoint::new(net, features.input, meta)?, loss_history: history })
}

/// ROC AUC by the rank-sum statistic, ties sharing their average rank.
/// `None` when either positives or negatives are absent.
pub fn auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), truth.len());
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| truth[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    /// `None` for classes with no positive or no negative clip.
    pub per_class_auc: Vec<Option<f64>>,
    /// Mean over classes with a defined AUC.
    pub mean_auc: f64,
}

/// Per-class AUC of `scores` (rows = clips) against multi-hot `labels`.
pub fn auc_report(classes: &[String], scores: &[Vec<f64>], labels: &[Vec<u8>]) -> EvalReport {
    let per_class_auc: Vec<Option<f64>> = (0..classes.len())
        .map(|c| {
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let t: Vec<bool> = labels.iter().map(|l| l[c] == 1).collect();
            auc(&s, &t)
        })
        .collect();
    let defined: Vec<f64> = per_class_auc.iter().flatten().copied().collect();
    let mean_auc = if defined.is_empty() { f64::NAN } else { mean(&defined) };
    EvalReport { classes: classes.to_vec(), per_class_auc, mean_auc }
}

/// Eval-mode softmax scores for each clip.
pub fn predict_scores(ckpt: &ModelCheckpoint, clips: &[LabeledClip]) -> Result<Vec<Vec<f64>>> {
    let f = ckpt.input.featurizer()?;
    let shape = ckpt.input.feature_shape();
    let net = &ckpt.net;
    let chunks: Vec<Vec<Vec<f64>>> = clips
        .par_chunks(16)
        .map(|chunk| {
            let feats: Vec<Vec<f32>> = chunk.iter().map(|c| f.features(&c.wave)).collect::<Result<_>>()?;
            let items: Vec<&[f32]> = feats.iter().map(Vec::as_slice).collect();
            let p = net.predict(&Tensor::stack(&items, &shape)?)?;
            Ok((0..p.batch()).map(|i| p.item(i).iter().map(|&v| v as f64).collect()).collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

pub fn evaluate(ckpt: &ModelCheckpoint, clips: &[LabeledClip]) -> Result<EvalReport> {
    let k = ckpt.net.architecture().n_classes();
    if let Some(c) = clips.iter().find(|c| c.labels.len() != k) {
        return Err(Error::shape(format!("model has {k} classes, clip has {} labels", c.labels.len())));
    }
    let scores = predict_scores(ckpt, clips)?;
    let labels: Vec<Vec<u8>> = clips.iter().map(|c| c.labels.clone()).collect();
    let classes = if ckpt.meta.classes.len() == k {
        ckpt.meta.classes.clone()
    } else {
        (0..k).map(|i| format!("class{i}")).collect()
    };
    Ok(auc_report(&classes, &scores, &labels))
}
