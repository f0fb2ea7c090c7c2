//! Neuralogram extraction: slide the network's input window over a signal,
//! read the embedding layer at each position and stack the vectors as
//! columns.
//!
//! Windows are placed wholly inside the signal ("valid" windowing), so a
//! signal of `dur` seconds yields `floor((dur − window) / hop) + 1` columns.
//! Each window is featurised and embedded independently in eval mode, so
//! column `j` equals the embedding of the standalone clip starting at
//! `j · hop`.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Tensor;
use crate::signal::{resample, Waveform};
use crate::train::Featurizer;

/// Slack for floating-point durations that should divide exactly.
const DUR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralogramConfig {
    pub window_s: f64,
    pub hop_s: f64,
    /// Layer to read; `None` uses the checkpoint's embedding layer.
    pub layer: Option<usize>,
}

impl Default for NeuralogramConfig {
    fn default() -> Self {
        NeuralogramConfig { window_s: 2.0, hop_s: 0.5, layer: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralogramMeta {
    pub hop_s: f64,
    pub window_s: f64,
    pub layer: usize,
    pub sample_rate: u32,
    /// Original rate when the input had to be resampled.
    pub resampled_from: Option<u32>,
    pub source: String,
}

/// `N × n_frames` matrix of embeddings; column `j` covers
/// `[j·hop_s, j·hop_s + window_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Neuralogram {
    pub data: Matrix,
    pub meta: NeuralogramMeta,
}

/// `floor((dur − window_s) / hop_s) + 1`.
pub fn frame_count(dur: f64, window_s: f64, hop_s: f64) -> Result<usize> {
    if !(window_s > 0.0) || !(hop_s > 0.0) {
        return Err(Error::invalid("window and hop must be positive"));
    }
    if dur + DUR_EPS < window_s {
        return Err(Error::invalid(format!("signal of {dur} s is shorter than the {window_s} s window")));
    }
    Ok(((dur - window_s) / hop_s + DUR_EPS).floor().max(0.0) as usize + 1)
}

impl Neuralogram {
    pub fn embedding_size(&self) -> usize {
        self.data.rows()
    }

    pub fn n_frames(&self) -> usize {
        self.data.cols()
    }

    /// Start time of every column.
    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.n_frames()).map(|j| j as f64 * self.meta.hop_s).collect()
    }

    /// Header line `n,frames,hop_s,window_s,layer,sample_rate,resampled_from,source`,
    /// its values, then one line per embedding index with 9 significant
    /// digits per value (exact for `f32` data). `source` is a JSON string so
    /// commas and newlines in paths survive.
    pub fn to_csv(&self) -> String {
        let m = &self.meta;
        let mut out = format!(
            "{CSV_HEADER}\n{},{},{:?},{:?},{},{},{},{}\n",
            self.data.rows(),
            self.data.cols(),
            m.hop_s,
            m.window_s,
            m.layer,
            m.sample_rate,
            m.resampled_from.map(|r| r.to_string()).unwrap_or_default(),
            serde_json::Value::from(m.source.as_str())
        );
        for r in 0..self.data.rows() {
            let line: Vec<String> = self.data.row(r).iter().map(|&v| format!("{:.8e}", v as f32)).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let full = match lines.next().map(str::trim) {
            Some(CSV_HEADER) => true,
            Some(CSV_HEADER_SHORT) => false,
            _ => return Err(Error::Format("missing neuralogram CSV header".into())),
        };
        let values = lines.next().ok_or_else(|| Error::Truncated("missing header values".into()))?;
        let vals: Vec<&str> = values.splitn(if full { 8 } else { 5 }, ',').collect();
        let bad = |f: &str| Error::Format(format!("bad header field `{f}`"));
        let (head, rest) = match (full, vals.len()) {
            (true, 8) => vals.split_at(5),
            (false, 5) => (&vals[..], &[][..]),
            _ => return Err(Error::Format("header values do not match the header line".into())),
        };
        let [n, frames, hop, window, layer] = head[..] else { unreachable!() };
        let n: usize = n.trim().parse().map_err(|_| bad(n))?;
        let frames: usize = frames.trim().parse().map_err(|_| bad(frames))?;
        let hop_s: f64 = hop.trim().parse().map_err(|_| bad(hop))?;
        let window_s: f64 = window.trim().parse().map_err(|_| bad(window))?;
        let layer: usize = layer.trim().parse().map_err(|_| bad(layer))?;
        let (sample_rate, resampled_from, source) = match rest {
            [sr, from, source] => (
                sr.trim().parse().map_err(|_| bad(sr))?,
                match from.trim() {
                    "" => None,
                    f => Some(f.parse().map_err(|_| bad(f))?),
                },
                serde_json::from_str::<String>(source).map_err(|_| bad(source))?,
            ),
            _ => (0, None, String::new()),
        };
        let mut data = Vec::with_capacity(n * frames);
        let mut rows = 0;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let before = data.len();
            for f in line.split(',') {
                let v: f32 = f.trim().parse().map_err(|_| Error::Format(format!("bad value `{f}`")))?;
                data.push(v as f64);
            }
            if data.len() - before != frames {
                return Err(Error::Integrity(format!("row {rows} has {} values, header says {frames}", data.len() - before)));
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Integrity(format!("{rows} rows, header says {n}")));
        }
        Ok(Neuralogram {
            data: Matrix::from_vec(n, frames, data)?,
            meta: NeuralogramMeta { hop_s, window_s, layer, sample_rate, resampled_from, source },
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&MatHeader {
            rows: self.data.rows(),
            cols: self.data.cols(),
            dtype: "f32le".into(),
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.data.data().len());
        out.extend_from_slice(NEURALOGRAM_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for &v in self.data.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != NEURALOGRAM_MAGIC {
            return Err(Error::Format("not a neuralogram file (bad magic bytes)".into()));
        }
        let len_bytes: [u8; 8] =
            bytes.get(8..16).and_then(|b| b.try_into().ok()).ok_or_else(|| Error::Truncated("header length missing".into()))?;
        let header_len = u64::from_le_bytes(len_bytes);
        let header_end = 16u64
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| Error::Truncated(format!("header of {header_len} bytes runs past end of file")))?
            as usize;
        let h: MatHeader = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Format(format!("malformed header: {e}")))?;
        if h.dtype != "f32le" {
            return Err(Error::Format(format!("unsupported dtype `{}`", h.dtype)));
        }
        let payload = &bytes[header_end..];
        let need = 4 * h.rows as u64 * h.cols as u64;
        if (payload.len() as u64) < need {
            return Err(Error::Truncated(format!("payload has {} bytes, need {need}", payload.len())));
        }
        if payload.len() as u64 != need {
            return Err(Error::Integrity(format!("payload has {} bytes, header declares {need}", payload.len())));
        }
        let data =
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64).collect();
        Ok(Neuralogram { data: Matrix::from_vec(h.rows, h.cols, data)?, meta: h.meta })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// Loads either format, chosen by the magic bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(NEURALOGRAM_MAGIC) {
            Neuralogram::from_bytes(&bytes)
        } else {
            let text = String::from_utf8(bytes).map_err(|_| Error::Format("neither binary nor UTF-8 CSV".into()))?;
            Neuralogram::from_csv(&text)
        }
    }
}

pub const NEURALOGRAM_MAGIC: &[u8; 8] = b"NLGMAT01";
const CSV_HEADER: &str = "n,frames,hop_s,window_s,layer,sample_rate,resampled_from,source";
/// Header written before sample rate and source were recorded; still read.
const CSV_HEADER_SHORT: &str = "n,frames,hop_s,window_s,layer";

#[derive(Serialize, Deserialize)]
struct MatHeader {
    rows: usize,
    cols: usize,
    dtype: String,
    meta: NeuralogramMeta,
}

/// Resolves the layer to read and checks the window against the model.
fn check_config(ckpt: &ModelCheckpoint, cfg: &NeuralogramConfig) -> Result<usize> {
    let n_layers = ckpt.architecture().layers.len();
    let layer = cfg.layer.unwrap_or(ckpt.architecture().embedding_layer);
    if layer >= n_layers {
        return Err(Error::invalid(format!("layer index {layer} out of range for {n_layers} layers")));
    }
    let expected = ckpt.input.window_s();
    if (cfg.window_s - expected).abs() > 0.5 / ckpt.input.sample_rate as f64 {
        return Err(Error::invalid(format!("window of {} s does not match the model's {expected} s input", cfg.window_s)));
    }
    if !(cfg.hop_s > 0.0) || cfg.hop_s > cfg.window_s + DUR_EPS {
        return Err(Error::invalid(format!("hop {} s must be in (0, window]", cfg.hop_s)));
    }
    Ok(layer)
}

/// Eval-mode embedding of one model-length clip.
pub fn embed_clip(ckpt: &ModelCheckpoint, clip: &Waveform, layer: usize) -> Result<Vec<f64>> {
    embed_with(ckpt, &ckpt.input.featurizer()?, clip, layer)
}

fn embed_with(ckpt: &ModelCheckpoint, f: &Featurizer, clip: &Waveform, layer: usize) -> Result<Vec<f64>> {
    let x = Tensor::stack(&[&f.features(clip)?], &ckpt.input.feature_shape())?;
    Ok(ckpt.net.embed(&x, layer)?.data().iter().map(|&v| v as f64).collect())
}

/// Computes the Neuralogram of `wave`. Input at another sample rate is
/// resampled first and the original rate recorded in the metadata.
pub fn extract(wave: &Waveform, ckpt: &ModelCheckpoint, cfg: &NeuralogramConfig) -> Result<Neuralogram> {
    let layer = check_config(ckpt, cfg)?;
    let sr = ckpt.input.sample_rate;
    let (wave, resampled_from) = if wave.sample_rate() != sr {
        (std::borrow::Cow::Owned(resample(wave, sr)?), Some(wave.sample_rate()))
    } else {
        (std::borrow::Cow::Borrowed(wave), None)
    };
    let win = ckpt.input.clip_samples;
    if wave.len() < win {
        return Err(Error::SignalTooShort { len: wave.len(), needed: win });
    }
    let n = frame_count(wave.len() as f64 / sr as f64, cfg.window_s, cfg.hop_s)?;
    let starts: Vec<usize> = (0..n).map(|j| (j as f64 * cfg.hop_s * sr as f64).round() as usize).collect();
    let last = *starts.last().expect("at least one frame");
    let n = if last + win > wave.len() { n - 1 } else { n };

    let f = ckpt.input.featurizer()?;
    let columns: Vec<Vec<f64>> =
        starts[..n].par_iter().map(|&s| embed_with(ckpt, &f, &wave.slice(s, win)?, layer)).collect::<Result<_>>()?;
    let data = Matrix::from_columns(&columns)?;
    if !data.is_finite() {
        return Err(Error::NonFinite { layer, kind: "embedding" });
    }
    Ok(Neuralogram {
        data,
        meta: NeuralogramMeta {
            hop_s: cfg.hop_s,
            window_s: cfg.window_s,
            layer,
            sample_rate: sr,
            resampled_from,
            source: String::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_examples() {
        assert_eq!(frame_count(2.0, 2.0, 0.5).unwrap(), 1);
        assert_eq!(frame_count(30.0, 2.0, 0.5).unwrap(), 57);
        assert_eq!(frame_count(3.0, 2.0, 0.5).unwrap(), 3);
        assert_eq!(frame_count(2.4, 2.0, 0.5).unwrap(), 1);
        assert!(frame_count(1.9, 2.0, 0.5).is_err());
        // 0.1 is not exact in binary; 2.3 s still gives windows at 0, 0.1, 0.2, 0.3.
        assert_eq!(frame_count(2.3, 2.0, 0.1).unwrap(), 4);
    }

    fn sample() -> Neuralogram {
        let data = Matrix::from_fn(3, 4, |r, c| (((r * 7 + c) as f64 * 0.1234567).sin() * 1e3f64.powi(r as i32 - 1)) as f32 as f64);
        Neuralogram {
            data,
            meta: NeuralogramMeta {
                hop_s: 0.5,
                window_s: 2.0,
                layer: 17,
                sample_rate: 8000,
                resampled_from: None,
                source: "x.wav".into(),
            },
        }
    }

    #[test]
    fn csv_round_trip_is_exact_for_f32() {
        let ng = sample();
        let back = Neuralogram::from_csv(&ng.to_csv()).unwrap();
        assert_eq!(back, ng);
        assert!(ng.to_csv().starts_with("n,frames,hop_s,window_s,layer,sample_rate,resampled_from,source\n3,4,0.5,2.0,17,8000,,\"x.wav\"\n"));
    }

    #[test]
    fn csv_keeps_awkward_sources_and_reads_short_headers() {
        let mut ng = sample();
        ng.meta.source = "a,b\n\"c\".wav".into();
        ng.meta.resampled_from = Some(44100);
        assert_eq!(Neuralogram::from_csv(&ng.to_csv()).unwrap(), ng);
        let short = Neuralogram::from_csv("n,frames,hop_s,window_s,layer\n1,2,0.5,2.0,3\n1.0,2.0\n").unwrap();
        assert_eq!((short.meta.layer, short.meta.sample_rate), (3, 0));
    }

    #[test]
    fn binary_round_trip_and_errors() {
        let ng = sample();
        let bytes = ng.to_bytes().unwrap();
        assert_eq!(Neuralogram::from_bytes(&bytes).unwrap(), ng);
        let mut bad = bytes.clone();
        bad[3] = b'?';
        assert!(matches!(Neuralogram::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(Neuralogram::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Neuralogram::from_bytes(&long), Err(Error::Integrity(_))));
    }

    #[test]
    fn csv_row_count_checked() {
        let csv = sample().to_csv();
        let cut: String = csv.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(matches!(Neuralogram::from_csv(&cut), Err(Error::Integrity(_))));
    }
}
