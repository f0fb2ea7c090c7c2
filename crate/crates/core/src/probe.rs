//! Probe experiments on Neuralograms: index sorting, the chirp
//! (pitch-tracking) probe, the accelerating impulse-train (rhythm) probe,
//! the embedding-size study and PCA.
//!
//! The probes turn visual findings into numbers:
//!
//! * chirp: rows are sorted by their peak time on the down-sweep; on the
//!   up-sweep a frequency-selective row peaks again at the mirrored time.
//!   Monotonicity is the Spearman correlation between sorted rank and
//!   `end − up-sweep peak time` (1.0 when every active row tracks a fixed
//!   frequency), R² is the linear fit of up-sweep peak time against rank.
//! * rhythm: rows whose activation follows a comb-energy reference are
//!   summed into one curve over stimulus rate, and the cutoff is where that
//!   curve falls below half its low-rate plateau.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::corpus::LabeledClip;
use crate::error::{Error, Result};
use crate::extract::{extract, Neuralogram, NeuralogramConfig};
use crate::matrix::Matrix;
use crate::nn::Architecture;
use crate::signal::{gen_impulse_train, gen_linear_chirp, impulse_period_at, Stft, StftConfig, Waveform};
use crate::train::{evaluate, train, FeatureSet, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SortedNeuralogram {
    pub data: Matrix,
    /// `permutation[i]` is the original index of sorted row `i`.
    pub permutation: Vec<usize>,
    /// Rows `0..n_active` of `data` are the active ones.
    pub n_active: usize,
    /// Peak column of each sorted row within the sorting range.
    pub peak_frames: Vec<usize>,
    pub criterion: String,
}

impl SortedNeuralogram {
    pub fn inverse_permutation(&self) -> Vec<usize> {
        let mut inv = vec![0; self.permutation.len()];
        for (i, &p) in self.permutation.iter().enumerate() {
            inv[p] = i;
        }
        inv
    }
}

fn argmax(v: impl Iterator<Item = f64>) -> (usize, f64) {
    v.enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, x)| if x > bv { (i, x) } else { (bi, bv) })
}

/// Sorts rows by the column of their maximum within `cols`. Rows whose
/// maximum there is at least `min_activation` come first, ordered by peak
/// column then row index; the rest follow in their original order.
pub fn sort_rows_by_peak_time_in(data: &Matrix, cols: Range<usize>, min_activation: f64) -> SortedNeuralogram {
    let peaks: Vec<(usize, f64)> =
        (0..data.rows()).map(|r| argmax(data.row(r)[cols.clone()].iter().copied())).collect();
    let (mut active, dormant): (Vec<usize>, Vec<usize>) = (0..data.rows()).partition(|&r| peaks[r].1 >= min_activation);
    active.sort_by_key(|&r| (peaks[r].0, r));
    let n_active = active.len();
    let permutation: Vec<usize> = active.into_iter().chain(dormant).collect();
    let sorted = Matrix::from_fn(data.rows(), data.cols(), |r, c| data.get(permutation[r], c));
    SortedNeuralogram {
        peak_frames: permutation.iter().map(|&r| peaks[r].0).collect(),
        data: sorted,
        permutation,
        n_active,
        criterion: format!("peak time in frames {}..{}, min activation {min_activation}", cols.start, cols.end),
    }
}

pub fn sort_rows_by_peak_time(ng: &Neuralogram, min_activation: f64) -> SortedNeuralogram {
    sort_rows_by_peak_time_in(&ng.data, 0..ng.n_frames(), min_activation)
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation; `None` when either side is constant or too short.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&ranks(a), &ranks(b))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe: String,
    pub config: serde_json::Value,
    /// Finite scalar metrics.
    pub metrics: BTreeMap<String, f64>,
    /// Metrics that could not be computed.
    pub undefined: Vec<String>,
    pub flags: Vec<String>,
    pub artifacts: BTreeMap<String, String>,
}

impl ProbeReport {
    fn set(&mut self, name: &str, value: Option<f64>) {
        match value.filter(|v| v.is_finite()) {
            Some(v) => {
                self.metrics.insert(name.into(), v);
            }
            None => self.undefined.push(name.into()),
        }
    }
}

/// Rows whose maximum is below this fraction of the matrix maximum count as
/// dormant in the chirp probe.
pub const CHIRP_ACTIVE_FRACTION: f64 = 0.25;
/// |Spearman| below this is reported as chance level.
pub const CHANCE_SPEARMAN: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChirpParams {
    pub f_hi: f64,
    pub f_lo: f64,
    /// Total probe length; each sweep takes half.
    pub dur: f64,
    pub hop_s: f64,
}

impl Default for ChirpParams {
    fn default() -> Self {
        ChirpParams { f_hi: 4000.0, f_lo: 1.0, dur: 60.0, hop_s: 0.5 }
    }
}

/// Down-sweep from `f_hi` to `f_lo` then back up, each over `dur / 2`.
pub fn chirp_signal(p: &ChirpParams, sample_rate: u32) -> Result<Waveform> {
    let half = p.dur / 2.0;
    gen_linear_chirp(p.f_hi, p.f_lo, half, sample_rate)?.concat(&gen_linear_chirp(p.f_lo, p.f_hi, half, sample_rate)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChirpAnalysis {
    pub sorted: SortedNeuralogram,
    pub spearman: Option<f64>,
    pub r_squared: Option<f64>,
    /// Rows active in both sweeps over all rows.
    pub active_fraction: f64,
    pub n_active: usize,
    /// Per active row (in sorted order): instantaneous frequency at its
    /// down-sweep and up-sweep peaks.
    pub peak_freqs: Vec<(f64, f64)>,
}

/// Chirp metrics of a Neuralogram of the down/up probe. `half_dur` is the
/// length of one sweep; a column belongs to a sweep when its window lies
/// wholly inside it.
pub fn analyze_chirp(ng: &Neuralogram, f_hi: f64, f_lo: f64, half_dur: f64, min_activation: f64) -> ChirpAnalysis {
    let (hop, win) = (ng.meta.hop_s, ng.meta.window_s);
    let eps = 1e-9;
    let n = ng.n_frames();
    let down_end = (0..n).take_while(|&j| j as f64 * hop + win <= half_dur + eps).count();
    let up_start = (0..n).find(|&j| j as f64 * hop >= half_dur - eps).unwrap_or(n);
    let center = |j: usize| j as f64 * hop + win / 2.0;
    let f_down = |j: usize| f_hi + (f_lo - f_hi) * center(j) / half_dur;
    let f_up = |j: usize| f_lo + (f_hi - f_lo) * (center(j) - half_dur) / half_dur;

    let sorted = sort_rows_by_peak_time_in(&ng.data, 0..down_end, min_activation);
    let end = 2.0 * half_dur;
    let (mut rank, mut up_time, mut peak_freqs) = (Vec::new(), Vec::new(), Vec::new());
    if up_start < n {
        for i in 0..sorted.n_active {
            let row = &ng.data.row(sorted.permutation[i])[up_start..];
            let (k, v) = argmax(row.iter().copied());
            if v < min_activation {
                continue;
            }
            let j = up_start + k;
            rank.push(rank.len() as f64);
            up_time.push(center(j));
            peak_freqs.push((f_down(sorted.peak_frames[i]), f_up(j)));
        }
    }
    let reversed: Vec<f64> = up_time.iter().map(|t| end - t).collect();
    let spearman = spearman(&rank, &reversed);
    let r_squared = pearson(&rank, &up_time).map(|r| r * r);
    ChirpAnalysis {
        active_fraction: rank.len() as f64 / ng.embedding_size().max(1) as f64,
        n_active: rank.len(),
        sorted,
        spearman,
        r_squared,
        peak_freqs,
    }
}

/// Runs the chirp probe on a checkpoint: builds the down/up sweep, extracts
/// its Neuralogram and analyses it.
pub fn chirp_probe(ckpt: &ModelCheckpoint, p: &ChirpParams) -> Result<(ProbeReport, Neuralogram, ChirpAnalysis)> {
    let wave = chirp_signal(p, ckpt.input.sample_rate)?;
    let cfg = NeuralogramConfig { window_s: ckpt.input.window_s(), hop_s: p.hop_s, layer: None };
    let ng = extract(&wave, ckpt, &cfg)?;
    let max = ng.data.data().iter().fold(0.0f64, |m, &v| m.max(v));
    let min_activation = if max > 0.0 { CHIRP_ACTIVE_FRACTION * max } else { f64::INFINITY };
    let a = analyze_chirp(&ng, p.f_hi, p.f_lo, p.dur / 2.0, min_activation);
    let mut report = ProbeReport {
        probe: "chirp".into(),
        config: serde_json::to_value(p)?,
        ..ProbeReport::default()
    };
    report.set("spearman", a.spearman);
    report.set("r_squared", a.r_squared);
    report.set("active_row_fraction", Some(a.active_fraction));
    report.set("active_rows", Some(a.n_active as f64));
    report.set("min_activation", Some(min_activation));
    if a.spearman.is_none_or(|s| s.abs() < CHANCE_SPEARMAN) {
        report.flags.push("chance_level".into());
    }
    if ckpt.meta.steps == 0 {
        report.flags.push("untrained_checkpoint".into());
    }
    Ok((report, ng, a))
}

/// Width of the median smoothing in [`estimate_cutoff`].
pub const CUTOFF_MEDIAN_WIDTH: usize = 5;
/// Fraction of the curve (lowest rates first) that forms the plateau.
pub const PLATEAU_FRACTION: f64 = 0.2;
/// Relative level below which the curve counts as collapsed.
pub const CUTOFF_LEVEL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffEstimate {
    pub cutoff_hz: Option<f64>,
    /// Rate spacing between the frames either side of the cutoff.
    pub bin_hz: Option<f64>,
    pub plateau: f64,
    pub smoothed: Vec<f64>,
    pub reason: Option<String>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Centred running median, truncated at the ends.
pub fn median_smooth(x: &[f64], width: usize) -> Vec<f64> {
    let h = width / 2;
    (0..x.len())
        .map(|i| {
            let mut w = x[i.saturating_sub(h)..(i + h + 1).min(x.len())].to_vec();
            median(&mut w)
        })
        .collect()
}

/// Largest rate `r` such that the 5-frame median-smoothed energy stays at or
/// above half its low-rate plateau for every rate up to `r`.
///
/// The plateau is the median of the smoothed curve over the lowest-rate 20 %
/// of frames. The cutoff is undefined when the plateau is not positive, when
/// the curve never falls below the threshold (flat curve, or the sweep ends
/// too early), or when it is below threshold from the first frame.
pub fn estimate_cutoff(energy: &[f64], rates: &[f64]) -> Result<CutoffEstimate> {
    estimate_cutoff_with(energy, rates, None)
}

/// Rates spanned by the lowest-rate 20 % of frames.
pub fn plateau_band(rates: &[f64]) -> Option<(f64, f64)> {
    if rates.is_empty() {
        return None;
    }
    let n = ((PLATEAU_FRACTION * rates.len() as f64).ceil() as usize).clamp(1, rates.len());
    Some((rates[0], rates[n - 1]))
}

/// [`estimate_cutoff`] with the plateau taken over the frames whose rate
/// lies in `band` (inclusive) instead of the lowest 20 % of frames. Frames
/// below the band are ignored when looking for the drop.
pub fn estimate_cutoff_with(energy: &[f64], rates: &[f64], band: Option<(f64, f64)>) -> Result<CutoffEstimate> {
    if energy.len() != rates.len() {
        return Err(Error::shape(format!("{} energies for {} rates", energy.len(), rates.len())));
    }
    if rates.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("rates must be strictly increasing"));
    }
    let smoothed = median_smooth(energy, CUTOFF_MEDIAN_WIDTH);
    let (lo, hi) = band.or_else(|| plateau_band(rates)).unwrap_or((0.0, -1.0));
    let mut in_band: Vec<f64> =
        smoothed.iter().zip(rates).filter(|(_, &r)| r >= lo && r <= hi).map(|(&e, _)| e).collect();
    let plateau = if in_band.is_empty() { 0.0 } else { median(&mut in_band) };
    let undefined = |reason: &str| CutoffEstimate {
        cutoff_hz: None,
        bin_hz: None,
        plateau,
        smoothed: smoothed.clone(),
        reason: Some(reason.into()),
    };
    if !(plateau > 0.0) {
        return Ok(undefined("no positive low-rate plateau"));
    }
    let threshold = CUTOFF_LEVEL * plateau;
    let start = rates.iter().position(|&r| r >= lo).unwrap_or(0);
    match smoothed[start..].iter().position(|&e| e < threshold).map(|i| i + start) {
        None => Ok(undefined("curve never falls below half the plateau")),
        Some(i) if i == start => Ok(undefined("curve starts below half the plateau")),
        Some(i) => Ok(CutoffEstimate {
            cutoff_hz: Some(rates[i - 1]),
            bin_hz: Some(rates[i] - rates[i - 1]),
            plateau,
            smoothed,
            reason: None,
        }),
    }
}

/// Minimum correlation with the comb-energy reference for a row to count as
/// rhythm-tracking.
pub const RHYTHM_MIN_CORRELATION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RhythmParams {
    pub p0: f64,
    pub p1: f64,
    pub dur: f64,
    /// Start period of the comparison run.
    pub alt_p0: f64,
    pub hop_s: f64,
}

impl Default for RhythmParams {
    fn default() -> Self {
        RhythmParams { p0: 0.1, p1: 0.001, dur: 300.0, alt_p0: 0.2, hop_s: 0.5 }
    }
}

/// Comb-energy reference of one window: the standard deviation over frames
/// of log frame energy. Resolved impulses make frame energy swing by orders
/// of magnitude; once several impulses fall in every frame it flattens.
pub fn comb_reference(window: &Waveform, stft: &Stft) -> Result<f64> {
    let spec = stft.power(window)?;
    let (bins, frames) = (spec.n_bins(), spec.n_frames());
    let e: Vec<f64> =
        (0..frames).map(|m| ((0..bins).map(|k| spec.data.get(k, m)).sum::<f64>() + 1e-10).log10()).collect();
    let mean = e.iter().sum::<f64>() / frames as f64;
    Ok((e.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / frames as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhythmRun {
    pub p0: f64,
    /// Instantaneous rate `1 / p(t)` at each window centre.
    pub rates: Vec<f64>,
    pub reference: Vec<f64>,
    /// Summed activation of the rhythm rows per frame.
    pub energy: Vec<f64>,
    pub cutoff: CutoffEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhythmAnalysis {
    pub runs: Vec<RhythmRun>,
    pub rhythm_rows: Vec<usize>,
    pub neuralograms: Vec<Neuralogram>,
}

impl RhythmAnalysis {
    /// Cutoff difference in units of the coarser rate bin of the two runs.
    pub fn cutoff_difference_bins(&self) -> Option<f64> {
        let [a, b] = &self.runs[..] else { return None };
        let (ca, cb) = (a.cutoff.cutoff_hz?, b.cutoff.cutoff_hz?);
        let bin = a.cutoff.bin_hz?.max(b.cutoff.bin_hz?);
        Some((ca - cb).abs() / bin)
    }

    /// `p0,rate_hz,reference,energy,smoothed` rows for both runs.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("p0,rate_hz,reference,energy,smoothed\n");
        for r in &self.runs {
            for i in 0..r.rates.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.p0, r.rates[i], r.reference[i], r.energy[i], r.cutoff.smoothed[i]
                );
            }
        }
        out
    }
}

/// Rows whose activation correlates with `reference` at least
/// [`RHYTHM_MIN_CORRELATION`] over the given columns.
pub fn rhythm_rows(data: &Matrix, reference: &[f64]) -> Vec<usize> {
    (0..data.rows())
        .filter(|&r| pearson(data.row(r), reference).is_some_and(|c| c >= RHYTHM_MIN_CORRELATION))
        .collect()
}

/// Turns Neuralograms of impulse trains into cutoff estimates. Rhythm rows
/// are chosen once over the concatenated frames of every run so the
/// compared curves sum the same rows, and every run measures its plateau
/// over the same rate band: the lowest 20 % of frames of the run that
/// starts fastest, which every slower-starting run also sweeps through.
pub fn analyze_rhythm(runs: Vec<(f64, Neuralogram, Vec<f64>, Vec<f64>)>) -> Result<RhythmAnalysis> {
    let n_rows = runs.first().map_or(0, |r| r.1.embedding_size());
    let joint = Matrix::from_fn(n_rows, runs.iter().map(|r| r.1.n_frames()).sum(), |row, c| {
        let mut c = c;
        for r in &runs {
            if c < r.1.n_frames() {
                return r.1.data.get(row, c);
            }
            c -= r.1.n_frames();
        }
        unreachable!()
    });
    let reference: Vec<f64> = runs.iter().flat_map(|r| r.3.iter().copied()).collect();
    let rows = rhythm_rows(&joint, &reference);
    let band = runs
        .iter()
        .filter(|r| !r.2.is_empty())
        .max_by(|a, b| a.2[0].total_cmp(&b.2[0]))
        .and_then(|r| plateau_band(&r.2));
    let mut out = Vec::new();
    let mut ngs = Vec::new();
    for (p0, ng, rates, reference) in runs {
        let energy: Vec<f64> = (0..ng.n_frames()).map(|c| rows.iter().map(|&r| ng.data.get(r, c)).sum()).collect();
        let cutoff = estimate_cutoff_with(&energy, &rates, band)?;
        out.push(RhythmRun { p0, rates, reference, energy, cutoff });
        ngs.push(ng);
    }
    Ok(RhythmAnalysis { runs: out, rhythm_rows: rows, neuralograms: ngs })
}

/// Neuralogram, per-frame rate and comb reference of one impulse train.
fn rhythm_run(ckpt: &ModelCheckpoint, p0: f64, p: &RhythmParams) -> Result<(f64, Neuralogram, Vec<f64>, Vec<f64>)> {
    let sr = ckpt.input.sample_rate;
    let wave = gen_impulse_train(p0, p.p1, p.dur, sr)?;
    let window_s = ckpt.input.window_s();
    let ng = extract(&wave, ckpt, &NeuralogramConfig { window_s, hop_s: p.hop_s, layer: None })?;
    let rates: Vec<f64> = ng
        .frame_times()
        .iter()
        .map(|t| 1.0 / impulse_period_at(p0, p.p1, p.dur, t + window_s / 2.0))
        .collect();
    let stft = Stft::new(StftConfig::default(), sr)?;
    let win = ckpt.input.clip_samples;
    let reference = (0..ng.n_frames())
        .map(|j| comb_reference(&wave.slice((j as f64 * p.hop_s * sr as f64).round() as usize, win)?, &stft))
        .collect::<Result<_>>()?;
    Ok((p0, ng, rates, reference))
}

/// Runs the accelerating impulse train from `p0` and from `alt_p0` and
/// compares the cutoffs.
pub fn rhythm_probe(ckpt: &ModelCheckpoint, p: &RhythmParams) -> Result<(ProbeReport, RhythmAnalysis)> {
    if !(p.p1 < p.p0 && p.p1 < p.alt_p0) {
        return Err(Error::invalid("the period must shrink over the sweep (p1 < p0)"));
    }
    let a = analyze_rhythm(vec![rhythm_run(ckpt, p.p0, p)?, rhythm_run(ckpt, p.alt_p0, p)?])?;
    let mut report = ProbeReport { probe: "rhythm".into(), config: serde_json::to_value(p)?, ..ProbeReport::default() };
    report.set("cutoff_hz", a.runs[0].cutoff.cutoff_hz);
    report.set("cutoff_hz_alt", a.runs[1].cutoff.cutoff_hz);
    report.set("rate_bin_hz", a.runs[0].cutoff.bin_hz);
    report.set("rate_bin_hz_alt", a.runs[1].cutoff.bin_hz);
    report.set("cutoff_difference_bins", a.cutoff_difference_bins());
    report.set("rhythm_rows", Some(a.rhythm_rows.len() as f64));
    for r in &a.runs {
        if let Some(reason) = &r.cutoff.reason {
            report.flags.push(format!("inconclusive (p0 = {}): {reason}", r.p0));
        }
    }
    if a.rhythm_rows.is_empty() {
        report.flags.push("no rhythm-tracking rows".into());
    }
    Ok((report, a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub embedding_size: usize,
    pub mean_auc: f64,
    pub chirp_spearman: Option<f64>,
}

/// Trains one desk model per embedding size (same data and seed), then
/// evaluates AUC on `heldout` and the chirp monotonicity. Models already in
/// `cache` are reused and new ones are added, so duplicate sizes train once.
pub fn embedding_size_study(
    features: &FeatureSet,
    heldout: &[LabeledClip],
    sizes: &[usize],
    cfg: &TrainConfig,
    chirp: &ChirpParams,
    cache: &mut BTreeMap<usize, ModelCheckpoint>,
    mut on_step: impl FnMut(usize, usize, f64),
) -> Result<Vec<StudyRow>> {
    if let Some(&n) = sizes.iter().find(|&&n| n < 2) {
        return Err(Error::invalid(format!("embedding size {n} is below 2")));
    }
    let mut rows: BTreeMap<usize, StudyRow> = BTreeMap::new();
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if let Some(r) = rows.get(&n) {
            out.push(r.clone());
            continue;
        }
        if !cache.contains_key(&n) {
            let arch = Architecture::desk(features.classes.len(), n);
            let ckpt = train(features, arch, cfg, |s, l| on_step(n, s, l))?.checkpoint;
            cache.insert(n, ckpt);
        }
        let ckpt = &cache[&n];
        let eval = evaluate(ckpt, heldout)?;
        let (_, _, a) = chirp_probe(ckpt, chirp)?;
        let row = StudyRow { embedding_size: n, mean_auc: eval.mean_auc, chirp_spearman: a.spearman };
        rows.insert(n, row.clone());
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// One `k`-vector per input.
    pub coords: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// Unit principal axes, largest variance first.
    pub components: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const PCA_RANK_TOL: f64 = 1e-10;

/// Mean-centred PCA through the eigendecomposition of the covariance.
/// Each axis is signed so its largest-magnitude entry is positive.
pub fn pca_project(vectors: &[Vec<f64>], k: usize) -> Result<Pca> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if vectors.len() < k + 1 {
        return Err(Error::invalid(format!("PCA to {k} dimensions needs at least {} vectors, got {}", k + 1, vectors.len())));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::shape("vectors have differing lengths"));
    }
    let n = vectors.len();
    let mean: Vec<f64> = (0..d).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = (x.transpose() * &x) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let rank = values.iter().filter(|&&v| v > PCA_RANK_TOL * values[0]).count();
    if values[0] <= 0.0 || k > rank {
        return Err(Error::RankDeficient { k, rank: if values[0] <= 0.0 { 0 } else { rank } });
    }
    let components: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&i| {
            let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let (big, _) = argmax(c.iter().map(|v| v.abs()));
            if c[big] < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            c
        })
        .collect();
    let coords = (0..n)
        .map(|i| components.iter().map(|c| c.iter().zip(x.row(i).iter()).map(|(a, b)| a * b).sum()).collect())
        .collect();
    Ok(Pca { coords, explained_variance_ratio: values[..k].iter().map(|v| v / total).collect(), components, mean })
}
