//! Seeded synthetic multi-label corpus.
//!
//! Every clip mixes one to `max_active` sources drawn from a fixed set of
//! generator classes. Clip `i` depends only on `(seed, i)`: its primary class
//! is `i mod n_classes` (so classes are balanced), and any extra sources are
//! distinct classes drawn uniformly from the rest.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, Rng};
use crate::signal::{gen_impulse_train, gen_linear_chirp, Waveform};
use crate::wav::write_wav;

/// Peak amplitude of every generated clip.
pub const CLIP_PEAK: f64 = 0.9;

/// Generator classes. Parameter ranges below assume an 8 kHz rate and scale
/// down automatically when Nyquist is lower.
///
/// | class | parameters |
/// |---|---|
/// | `sine` | f ∈ [100, 3000] Hz, random phase |
/// | `harmonic_tone` | f0 ∈ [100, 400] Hz, 4–8 harmonics with 1/h amplitudes |
/// | `chirp_up` | f0 ∈ [100, 1500] Hz, rising by 800–2300 Hz over the clip |
/// | `chirp_down` | the same sweep reversed |
/// | `white_noise` | unit Gaussian |
/// | `am_tone` | carrier ∈ [300, 3000] Hz, rate ∈ [3, 12] Hz, depth ∈ [0.6, 1] |
/// | `impulse_train` | period 30–150 ms drifting by up to ±30 % |
/// | `filtered_noise` | Gaussian noise through a band-pass, centre ∈ [300, 3000] Hz, Q ∈ [2, 8] |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoundClass {
    Sine,
    HarmonicTone,
    ChirpUp,
    ChirpDown,
    WhiteNoise,
    AmTone,
    ImpulseTrain,
    FilteredNoise,
}

impl SoundClass {
    pub const ALL: [SoundClass; 8] = [
        SoundClass::Sine,
        SoundClass::HarmonicTone,
        SoundClass::ChirpUp,
        SoundClass::ChirpDown,
        SoundClass::WhiteNoise,
        SoundClass::AmTone,
        SoundClass::ImpulseTrain,
        SoundClass::FilteredNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SoundClass::Sine => "sine",
            SoundClass::HarmonicTone => "harmonic_tone",
            SoundClass::ChirpUp => "chirp_up",
            SoundClass::ChirpDown => "chirp_down",
            SoundClass::WhiteNoise => "white_noise",
            SoundClass::AmTone => "am_tone",
            SoundClass::ImpulseTrain => "impulse_train",
            SoundClass::FilteredNoise => "filtered_noise",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        SoundClass::ALL.into_iter().find(|c| c.name() == name)
    }

    /// One source of this class, peak-normalised to 1 (or all zero).
    pub fn generate(self, len: usize, sample_rate: u32, rng: &mut Rng) -> Result<Vec<f64>> {
        let sr = sample_rate as f64;
        let dur = len as f64 / sr;
        // Keep every tonal component safely below Nyquist.
        let top = (0.475 * sr).min(3900.0);
        let fscale = (top / 3900.0).min(1.0);
        let t = |n: usize| n as f64 / sr;
        let mut x: Vec<f64> = match self {
            SoundClass::Sine => {
                let f = fscale * rng.random_range(100.0..3000.0);
                let phase = rng.random_range(0.0..TAU);
                (0..len).map(|n| (TAU * f * t(n) + phase).sin()).collect()
            }
            SoundClass::HarmonicTone => {
                let f0 = fscale * rng.random_range(100.0..400.0);
                let harmonics = rng.random_range(4..=8usize);
                let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..TAU)).collect();
                (0..len)
                    .map(|n| {
                        (1..=harmonics)
                            .filter(|&h| h as f64 * f0 < top)
                            .map(|h| (TAU * h as f64 * f0 * t(n) + phases[h - 1]).sin() / h as f64)
                            .sum()
                    })
                    .collect()
            }
            SoundClass::ChirpUp | SoundClass::ChirpDown => {
                let lo = fscale * rng.random_range(100.0..1500.0);
                let hi = (lo + fscale * rng.random_range(800.0..2300.0)).min(top);
                let (f0, f1) = if self == SoundClass::ChirpUp { (lo, hi) } else { (hi, lo) };
                gen_linear_chirp(f0, f1, dur, sample_rate)?.into_samples()
            }
            SoundClass::WhiteNoise => (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            SoundClass::AmTone => {
                let fc = fscale * rng.random_range(300.0..3000.0);
                let rate = rng.random_range(3.0..12.0);
                let depth = rng.random_range(0.6..1.0);
                let (pc, pm) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
                (0..len)
                    .map(|n| (1.0 + depth * (TAU * rate * t(n) + pm).sin()) * (TAU * fc * t(n) + pc).sin())
                    .collect()
            }
            SoundClass::ImpulseTrain => {
                let p0 = rng.random_range(0.03..0.15);
                let p1 = p0 * rng.random_range(0.7..1.3);
                let train = gen_impulse_train(p0, p1, dur, sample_rate)?.into_samples();
                // Random start offset so impulses are not frame-aligned.
                let shift = rng.random_range(0..((p0 * sr) as usize).max(1));
                let mut x = vec![0.0; len];
                x[shift..].copy_from_slice(&train[..len - shift]);
                x
            }
            SoundClass::FilteredNoise => {
                let fc = fscale * rng.random_range(300.0..3000.0);
                let q = rng.random_range(2.0..8.0);
                let noise: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                bandpass(&noise, fc, q, sr)
            }
        };
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            x.iter_mut().for_each(|v| *v /= peak);
        }
        Ok(x)
    }
}

/// Constant 0 dB peak-gain biquad band-pass.
fn bandpass(x: &[f64], fc: f64, q: f64, sr: f64) -> Vec<f64> {
    let w0 = TAU * fc / sr;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub classes: Vec<SoundClass>,
    pub n_clips: usize,
    pub clip_dur: f64,
    pub sample_rate: u32,
    pub max_active: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    /// All eight classes, 2000 two-second clips at 8 kHz, up to two sources
    /// per clip, seed 42.
    fn default() -> Self {
        CorpusSpec {
            classes: SoundClass::ALL.to_vec(),
            n_clips: 2000,
            clip_dur: 2.0,
            sample_rate: 8000,
            max_active: 2,
            seed: 42,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("corpus needs at least one class"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(Error::invalid(format!("class `{}` listed twice", c.name())));
            }
        }
        if self.max_active < 1 || self.max_active > self.classes.len() {
            return Err(Error::invalid(format!(
                "max_active must be in 1..={}, got {}",
                self.classes.len(),
                self.max_active
            )));
        }
        if self.n_clips == 0 {
            return Err(Error::invalid("n_clips must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if !(self.clip_dur > 0.0) || self.clip_samples() < 2 {
            return Err(Error::invalid(format!("clip duration {} s is too short", self.clip_dur)));
        }
        Ok(())
    }

    pub fn clip_samples(&self) -> usize {
        (self.clip_dur * self.sample_rate as f64).round() as usize
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name().to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub wave: Waveform,
    /// Multi-hot, one entry per class of the corpus spec.
    pub labels: Vec<u8>,
}

impl LabeledClip {
    pub fn active(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Clip `index` of the corpus described by `spec`.
pub fn make_clip(spec: &CorpusSpec, index: usize) -> Result<LabeledClip> {
    let n = spec.classes.len();
    let len = spec.clip_samples();
    let mut rng = stream_rng(spec.seed, stream::CORPUS_CLIP, index as u64);
    let k = rng.random_range(1..=spec.max_active);
    let primary = index % n;
    let others: Vec<usize> = (0..n).filter(|&c| c != primary).collect();
    let mut active = vec![primary];
    active.extend(others.choose_multiple(&mut rng, k - 1).copied());
    active.sort_unstable();

    let mut labels = vec![0u8; n];
    let mut mix = vec![0.0; len];
    for &c in &active {
        labels[c] = 1;
        let gain = rng.random_range(0.5..1.0);
        let src = spec.classes[c].generate(len, spec.sample_rate, &mut rng)?;
        mix.iter_mut().zip(&src).for_each(|(m, s)| *m += gain * s);
    }
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        mix.iter_mut().for_each(|v| *v *= CLIP_PEAK / peak);
    }
    Ok(LabeledClip { wave: Waveform::new(mix, spec.sample_rate)?, labels })
}

/// All clips of `spec`, generated in parallel and returned in index order.
pub fn make_corpus(spec: &CorpusSpec) -> Result<Vec<LabeledClip>> {
    spec.validate()?;
    (0..spec.n_clips).into_par_iter().map(|i| make_clip(spec, i)).collect()
}

pub fn clip_filename(index: usize) -> String {
    format!("clip_{index:05}.wav")
}

/// `clip_id,filename,<class...>` header followed by one row per clip.
pub fn manifest_csv(spec: &CorpusSpec, clips: &[LabeledClip]) -> String {
    let mut out = format!("clip_id,filename,{}\n", spec.class_names().join(","));
    for (i, clip) in clips.iter().enumerate() {
        let labels: Vec<String> = clip.labels.iter().map(u8::to_string).collect();
        let _ = writeln!(out, "{i},{},{}", clip_filename(i), labels.join(","));
    }
    out
}

/// Writes one 16-bit WAV per clip plus `manifest.csv` into `dir`.
pub fn export_corpus(spec: &CorpusSpec, clips: &[LabeledClip], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    clips.par_iter().enumerate().try_for_each(|(i, clip)| write_wav(&clip.wave, dir.join(clip_filename(i))))?;
    std::fs::write(dir.join("manifest.csv"), manifest_csv(spec, clips))?;
    Ok(())
}
