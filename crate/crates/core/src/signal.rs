//! Waveforms, probe-signal generators, resampling and the STFT power
//! spectrogram.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Mono audio with a sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Waveform { samples: vec![0.0; len], sample_rate }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Copies `len` samples starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Waveform> {
        if start + len > self.samples.len() {
            return Err(Error::SignalTooShort { len: self.samples.len(), needed: start + len });
        }
        Ok(Waveform { samples: self.samples[start..start + len].to_vec(), sample_rate: self.sample_rate })
    }

    pub fn concat(&self, other: &Waveform) -> Result<Waveform> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::invalid(format!(
                "cannot concatenate {} Hz and {} Hz signals",
                self.sample_rate, other.sample_rate
            )));
        }
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        Ok(Waveform { samples, sample_rate: self.sample_rate })
    }
}

fn sample_count(dur: f64, sample_rate: u32) -> Result<usize> {
    if !(dur > 0.0) || !dur.is_finite() {
        return Err(Error::invalid(format!("duration must be positive, got {dur}")));
    }
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    Ok((dur * sample_rate as f64).round() as usize)
}

/// `amp * sin(2π f n / sr)` for `round(dur * sr)` samples.
pub fn gen_sine(freq: f64, dur: f64, sample_rate: u32, amp: f64) -> Result<Waveform> {
    let n = sample_count(dur, sample_rate)?;
    if !(0.0..sample_rate as f64 / 2.0).contains(&freq) {
        return Err(Error::Aliasing { freq, sample_rate });
    }
    let sr = sample_rate as f64;
    let samples = (0..n).map(|i| amp * (TAU * (freq * (i as f64 / sr))).sin()).collect();
    Ok(Waveform { samples, sample_rate })
}

/// Linear chirp with phase `2π (f0 t + (f1 - f0) t² / (2 dur))`, unit amplitude.
///
/// Endpoints may sit exactly at Nyquist (the 4 kHz → 1 Hz probe at 8 kHz
/// touches it only at t = 0).
pub fn gen_linear_chirp(f0: f64, f1: f64, dur: f64, sample_rate: u32) -> Result<Waveform> {
    let n = sample_count(dur, sample_rate)?;
    let nyquist = sample_rate as f64 / 2.0;
    for f in [f0, f1] {
        if !(f > 0.0 && f <= nyquist) {
            return Err(Error::Aliasing { freq: f, sample_rate });
        }
    }
    let sr = sample_rate as f64;
    let sweep = (f1 - f0) / (2.0 * dur);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            (TAU * (f0 * t + sweep * t * t)).sin()
        })
        .collect();
    Ok(Waveform { samples, sample_rate })
}

/// Times (s) of the impulses of a train whose period moves linearly from
/// `p0` to `p1` over `dur`: the `k`-th impulse sits where `∫₀ᵗ ds / p(s)`
/// reaches `k`, starting with `k = 0` at `t = 0`.
pub fn impulse_times(p0: f64, p1: f64, dur: f64, until: f64) -> Vec<f64> {
    let slope = (p1 - p0) / dur;
    let inverse = |k: f64| {
        if slope.abs() < 1e-15 {
            k * p0
        } else {
            p0 * ((k * slope).exp() - 1.0) / slope
        }
    };
    let mut times = Vec::new();
    let mut k = 0.0;
    loop {
        let t = inverse(k);
        if !t.is_finite() || t > until {
            break;
        }
        times.push(t);
        k += 1.0;
    }
    times
}

/// Instantaneous period `p(t)` of [`gen_impulse_train`].
pub fn impulse_period_at(p0: f64, p1: f64, dur: f64, t: f64) -> f64 {
    p0 + (p1 - p0) * t / dur
}

/// Unit impulse train with linearly varying period, first impulse at t = 0.
pub fn gen_impulse_train(p0: f64, p1: f64, dur: f64, sample_rate: u32) -> Result<Waveform> {
    let n = sample_count(dur, sample_rate)?;
    let min_period = 2.0 / sample_rate as f64;
    for p in [p0, p1] {
        if !(p >= min_period) {
            return Err(Error::invalid(format!(
                "impulse period {p} s is below two samples ({min_period} s)"
            )));
        }
    }
    let sr = sample_rate as f64;
    let last = (n.saturating_sub(1)) as f64 / sr;
    let mut samples = vec![0.0; n];
    for t in impulse_times(p0, p1, dur, last) {
        let idx = (t * sr).round() as usize;
        if idx < n {
            samples[idx] = 1.0;
        }
    }
    Ok(Waveform { samples, sample_rate })
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Stopband attenuation the resampling filter is designed for.
const RESAMPLE_ATTEN_DB: f64 = 90.0;

/// Windowed-sinc (Kaiser) resampling to `target_rate`.
///
/// The lowpass passes up to 90% of the lower of the two Nyquist limits and
/// reaches full attenuation at that Nyquist limit. Samples outside the input
/// are zero, so the first and last `half_width` outputs carry the filter's
/// response to the signal edges.
pub fn resample(wav: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::invalid("target rate must be positive"));
    }
    if target_rate == wav.sample_rate {
        return Ok(wav.clone());
    }
    let ratio = target_rate as f64 / wav.sample_rate as f64;
    let out_len = (wav.len() as f64 * ratio).round() as usize;
    // Cutoffs in cycles per input sample.
    let stop = 0.5 * ratio.min(1.0);
    let pass = 0.9 * stop;
    let cutoff = 0.5 * (pass + stop);
    let transition = stop - pass;
    let beta = 0.1102 * (RESAMPLE_ATTEN_DB - 8.7);
    let half_width = ((RESAMPLE_ATTEN_DB - 8.0) / (2.285 * TAU * transition) / 2.0).ceil();
    let norm = bessel_i0(beta);

    let x = &wav.samples;
    if x.is_empty() {
        return Waveform::new(Vec::new(), target_rate);
    }
    let n_in = x.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let center = j as f64 / ratio;
        let lo = (center - half_width).ceil() as isize;
        let hi = (center + half_width).floor() as isize;
        let mut acc = 0.0;
        for k in lo.max(0)..=hi.min(n_in - 1) {
            let d = center - k as f64;
            let r = d / half_width;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            let arg = 2.0 * cutoff * d;
            let sinc = if arg.abs() < 1e-12 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
            acc += x[k as usize] * 2.0 * cutoff * sinc * w;
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFn {
    Rectangular,
    Hann,
}

impl WindowFn {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowFn::Rectangular => vec![1.0; len],
            WindowFn::Hann => {
                (0..len).map(|n| 0.5 * (1.0 - (TAU * n as f64 / len as f64).cos())).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Frame `m` is centred on sample `m * hop`; edges are reflected.
    Center,
    /// Frames lie wholly inside the signal.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub window_fn: WindowFn,
    pub padding: Padding,
}

impl Default for StftConfig {
    /// 30 ms hann window, 10 ms hop, 256-point FFT, centre padding:
    /// 129 bins × 200 frames for 2 s at 8 kHz.
    fn default() -> Self {
        StftConfig {
            window_ms: 30.0,
            hop_ms: 10.0,
            fft_size: 256,
            window_fn: WindowFn::Hann,
            padding: Padding::Center,
        }
    }
}

impl StftConfig {
    pub fn window_len(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.window_ms > 0.0 && self.hop_ms > 0.0) {
            return Err(Error::invalid("window and hop must be positive"));
        }
        if self.hop_ms > self.window_ms {
            return Err(Error::invalid("hop must not exceed the window"));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::invalid(format!("fft size {} is not a power of two", self.fft_size)));
        }
        let win = self.window_len(sample_rate);
        if win == 0 || self.hop_len(sample_rate) == 0 {
            return Err(Error::invalid("window or hop rounds to zero samples"));
        }
        if win > self.fft_size {
            return Err(Error::invalid(format!(
                "window of {win} samples exceeds fft size {}",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize, sample_rate: u32) -> usize {
        let hop = self.hop_len(sample_rate);
        let win = self.window_len(sample_rate);
        match self.padding {
            Padding::Center => len.div_ceil(hop),
            Padding::Valid => {
                if len < win {
                    0
                } else {
                    (len - win) / hop + 1
                }
            }
        }
    }
}

/// Power spectrogram, `n_bins × n_frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Matrix,
    /// Hz per bin.
    pub bin_hz: f64,
    /// Seconds per frame.
    pub hop_s: f64,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.data.rows()
    }

    pub fn n_frames(&self) -> usize {
        self.data.cols()
    }

    /// Index of the strongest bin in each frame.
    pub fn argmax_bins(&self) -> Vec<usize> {
        (0..self.n_frames())
            .map(|f| {
                (0..self.n_bins())
                    .max_by(|&a, &b| self.data.get(a, f).total_cmp(&self.data.get(b, f)))
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Mirror index into `[0, len)` (reflection without repeating the edge).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Reusable STFT engine; holds the FFT plan and window for one config and
/// sample rate.
pub struct Stft {
    cfg: StftConfig,
    sample_rate: u32,
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: StftConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let win = cfg.window_len(sample_rate);
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Stft {
            cfg,
            sample_rate,
            window: cfg.window_fn.coefficients(win),
            hop: cfg.hop_len(sample_rate),
            fft,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn power(&self, wav: &Waveform) -> Result<Spectrogram> {
        if wav.sample_rate != self.sample_rate {
            return Err(Error::invalid(format!(
                "STFT planned for {} Hz, got {} Hz",
                self.sample_rate, wav.sample_rate
            )));
        }
        let x = wav.samples();
        let win = self.window.len();
        if self.cfg.padding == Padding::Valid && x.len() < win {
            return Err(Error::SignalTooShort { len: x.len(), needed: win });
        }
        if x.is_empty() {
            return Err(Error::SignalTooShort { len: 0, needed: 1 });
        }
        let n_frames = self.cfg.frame_count(x.len(), self.sample_rate);
        let n_fft = self.cfg.fft_size;
        let n_bins = self.cfg.n_bins();
        let mut data = Matrix::zeros(n_bins, n_frames);
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for m in 0..n_frames {
            let start = match self.cfg.padding {
                Padding::Center => (m * self.hop) as isize - (win / 2) as isize,
                Padding::Valid => (m * self.hop) as isize,
            };
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < win {
                    let idx = start + i as isize;
                    let v = if idx >= 0 && (idx as usize) < x.len() {
                        x[idx as usize]
                    } else {
                        x[reflect(idx, x.len())]
                    };
                    Complex64::new(v * self.window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, c) in buf.iter().take(n_bins).enumerate() {
                data.set(k, m, c.norm_sqr());
            }
        }
        Ok(Spectrogram {
            data,
            bin_hz: self.sample_rate as f64 / n_fft as f64,
            hop_s: self.hop as f64 / self.sample_rate as f64,
        })
    }
}

/// `|FFT(w · frame)|²` for every frame, bins `0..=fft_size/2`.
pub fn power_spectrogram(wav: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(*cfg, wav.sample_rate())?.power(wav)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(padding: Padding) -> StftConfig {
        StftConfig { window_fn: WindowFn::Rectangular, padding, ..StftConfig::default() }
    }

    #[test]
    fn sine_length_zero_and_rms() {
        let s = gen_sine(440.0, 1.0, 8000, 1.0).unwrap();
        assert_eq!(s.len(), 8000);
        assert!((s.rms() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        let z = gen_sine(0.0, 1.0, 8000, 1.0).unwrap();
        assert!(z.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_above_nyquist_is_rejected() {
        assert!(matches!(gen_sine(4000.0, 1.0, 8000, 1.0), Err(Error::Aliasing { .. })));
        assert!(matches!(gen_sine(5000.0, 1.0, 8000, 1.0), Err(Error::Aliasing { .. })));
        assert!(gen_sine(440.0, 0.0, 8000, 1.0).is_err());
    }

    #[test]
    fn flat_chirp_is_a_sine() {
        let c = gen_linear_chirp(440.0, 440.0, 1.0, 8000).unwrap();
        let s = gen_sine(440.0, 1.0, 8000, 1.0).unwrap();
        assert_eq!(c, s);
    }

    #[test]
    fn chirp_midpoint_frequency() {
        let c = gen_linear_chirp(100.0, 200.0, 10.0, 8000).unwrap();
        let spec = power_spectrogram(&c, &StftConfig::default()).unwrap();
        // Oracle: instantaneous frequency at t = 5 s is (f0 + f1) / 2.
        let frame = (5.0 / spec.hop_s).round() as usize;
        let peak = spec.argmax_bins()[frame] as f64;
        let expected = 150.0 / spec.bin_hz;
        assert!((peak - expected).abs() <= 1.0, "peak bin {peak}, expected {expected}");
    }

    #[test]
    fn chirp_rejects_out_of_band() {
        assert!(gen_linear_chirp(0.0, 100.0, 1.0, 8000).is_err());
        assert!(gen_linear_chirp(100.0, 4001.0, 1.0, 8000).is_err());
        assert!(gen_linear_chirp(4000.0, 1.0, 1.0, 8000).is_ok());
    }

    #[test]
    fn constant_impulse_train() {
        let w = gen_impulse_train(0.1, 0.1, 1.05, 8000).unwrap();
        let idx: Vec<usize> =
            w.samples().iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
        assert_eq!(idx, (0..11).map(|k| k * 800).collect::<Vec<_>>());
    }

    #[test]
    fn accelerating_impulse_count_matches_integral() {
        let (p0, p1, dur, sr) = (0.1, 0.05, 1.0, 8000u32);
        let w = gen_impulse_train(p0, p1, dur, sr).unwrap();
        let count = w.samples().iter().filter(|&&v| v != 0.0).count();
        // Oracle: midpoint-rule integral of 1/p(t) over the sampled span.
        let n = 200_000;
        let end = (w.len() - 1) as f64 / sr as f64;
        let h = end / n as f64;
        let integral: f64 =
            (0..n).map(|i| h / impulse_period_at(p0, p1, dur, (i as f64 + 0.5) * h)).sum();
        assert_eq!(count, 1 + integral.floor() as usize);
        assert_eq!(count, 14);
    }

    #[test]
    fn impulse_period_below_two_samples_rejected() {
        assert!(gen_impulse_train(0.1, 1.0 / 8000.0, 1.0, 8000).is_err());
    }

    #[test]
    fn resample_identity() {
        let s = gen_sine(440.0, 0.5, 8000, 1.0).unwrap();
        let r = resample(&s, 8000).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn resample_keeps_in_band_tone() {
        let s = gen_sine(440.0, 1.0, 16000, 1.0).unwrap();
        let r = resample(&s, 8000).unwrap();
        assert_eq!(r.len(), 8000);
        let spec = power_spectrogram(&r, &StftConfig::default()).unwrap();
        let bins = spec.argmax_bins();
        let expected = 440.0 / spec.bin_hz;
        let mid = bins[bins.len() / 2] as f64;
        assert!((mid - expected).abs() <= 1.0);
        assert!((r.rms() - s.rms()).abs() < 0.01);
    }

    #[test]
    fn resample_removes_tone_above_new_nyquist() {
        // Away from the edges the stopband is well past 60 dB down.
        let s = gen_sine(6000.0, 1.0, 16000, 1.0).unwrap();
        let r = resample(&s, 8000).unwrap();
        let interior = Waveform::new(r.samples()[400..7600].to_vec(), 8000).unwrap();
        assert!(interior.rms() < s.rms() * 1e-3, "interior rms {}", interior.rms());
        // Whole-signal RMS includes the edge transients of the truncated tone.
        let s = gen_sine(6000.0, 4.0, 16000, 1.0).unwrap();
        let r = resample(&s, 8000).unwrap();
        assert!(r.rms() < 1e-3, "rms {}", r.rms());
    }

    #[test]
    fn resample_up_length() {
        let s = gen_sine(440.0, 0.25, 8000, 1.0).unwrap();
        let r = resample(&s, 11025).unwrap();
        assert_eq!(r.len(), (2000.0f64 * 11025.0 / 8000.0).round() as usize);
    }

    #[test]
    fn reference_shape_129_by_200() {
        let w = gen_sine(1000.0, 2.0, 8000, 1.0).unwrap();
        let spec = power_spectrogram(&w, &StftConfig::default()).unwrap();
        assert_eq!(spec.data.shape(), (129, 200));
        assert!((spec.hop_s - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_zero_spectrogram() {
        let w = Waveform::zeros(4000, 8000);
        let spec = power_spectrogram(&w, &StftConfig::default()).unwrap();
        assert!(spec.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rectangular_sine_peak_bin() {
        let w = gen_sine(1000.0, 1.0, 8000, 1.0).unwrap();
        let expected = (1000.0f64 * 256.0 / 8000.0).round() as usize;
        let spec = power_spectrogram(&w, &rect(Padding::Valid)).unwrap();
        assert!(spec.argmax_bins().iter().all(|&b| b == expected));
        // With centre padding only frame 0 sees the reflected edge, where the
        // mirrored sine cancels at its own bin.
        let spec = power_spectrogram(&w, &rect(Padding::Center)).unwrap();
        assert!(spec.argmax_bins()[1..].iter().all(|&b| b == expected));
    }

    #[test]
    fn valid_mode_counts_and_errors() {
        let cfg = rect(Padding::Valid);
        let w = Waveform::zeros(1000, 8000);
        let spec = power_spectrogram(&w, &cfg).unwrap();
        assert_eq!(spec.n_frames(), (1000 - 240) / 80 + 1);
        let short = Waveform::zeros(100, 8000);
        assert!(matches!(power_spectrogram(&short, &cfg), Err(Error::SignalTooShort { .. })));
    }

    #[test]
    fn config_validation() {
        let mut cfg = StftConfig::default();
        cfg.fft_size = 200;
        assert!(cfg.validate(8000).is_err());
        cfg.fft_size = 128;
        assert!(cfg.validate(8000).is_err());
        let cfg = StftConfig { hop_ms: 40.0, ..StftConfig::default() };
        assert!(cfg.validate(8000).is_err());
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-4, 5), 4);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-7, 3), 1);
    }

    #[test]
    fn waveform_rejects_non_finite() {
        assert!(Waveform::new(vec![0.0, f64::NAN], 8000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }
}
