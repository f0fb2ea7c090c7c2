//! Model checkpoint file.
//!
//! Layout:
//!
//! ```text
//! b"NLGCKPT1"                   8-byte magic
//! u64 little-endian             header length in bytes
//! UTF-8 JSON header             version, architecture, tensor table, RNG, input, metadata
//! f32 little-endian payloads    one per tensor, in table order
//! ```
//!
//! Each tensor-table entry gives `name`, `shape`, byte `offset` from the start
//! of the payload section and element count `len`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Architecture, Network, Tensor};
use crate::rng::{stream, RNG_ALGORITHM};
use crate::train::InputSpec;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NLGCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub corpus_seed: Option<u64>,
    pub classes: Vec<String>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub loss_history_tail: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub net: Network<f32>,
    pub input: InputSpec,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngSpec {
    pub algorithm: String,
    pub seed: u64,
    pub init_stream: u64,
    pub shuffle_stream: u64,
    pub dropout_stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub architecture: Architecture,
    pub tensors: Vec<TensorEntry>,
    pub rng: RngSpec,
    pub input: InputSpec,
    pub metadata: TrainingMeta,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl ModelCheckpoint {
    pub fn new(net: Network<f32>, input: InputSpec, meta: TrainingMeta) -> Result<Self> {
        if net.architecture().input_shape != input.feature_shape() {
            return Err(Error::shape(format!(
                "network input {:?} does not match feature shape {:?}",
                net.architecture().input_shape,
                input.feature_shape()
            )));
        }
        Ok(ModelCheckpoint { net, input, meta })
    }

    pub fn architecture(&self) -> &Architecture {
        self.net.architecture()
    }

    pub fn header(&self) -> CheckpointHeader {
        let mut offset = 0u64;
        let tensors = self
            .architecture()
            .param_specs()
            .into_iter()
            .zip(self.net.params())
            .map(|((name, shape), t)| {
                let e = TensorEntry { name, shape, offset, len: t.len() as u64 };
                offset += 4 * t.len() as u64;
                e
            })
            .collect();
        CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            architecture: self.architecture().clone(),
            tensors,
            rng: RngSpec {
                algorithm: RNG_ALGORITHM.into(),
                seed: self.meta.seed,
                init_stream: stream::INIT,
                shuffle_stream: stream::SHUFFLE,
                dropout_stream: stream::DROPOUT,
            },
            input: self.input,
            metadata: self.meta.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let payload: usize = self.net.params().iter().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 4 * payload);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.net.params() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Truncated(format!("{} bytes, shorter than the magic", bytes.len())));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
        }
        let len_bytes: [u8; 8] =
            bytes.get(8..16).and_then(|b| b.try_into().ok()).ok_or_else(|| Error::Truncated("header length missing".into()))?;
        let header_len = u64::from_le_bytes(len_bytes);
        let header_end = 16u64
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| Error::Truncated(format!("header of {header_len} bytes runs past end of file")))?
            as usize;
        let header_bytes = &bytes[16..header_end];
        let probe: VersionProbe =
            serde_json::from_slice(header_bytes).map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
        if probe.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: probe.format_version, expected: CHECKPOINT_VERSION });
        }
        let header: CheckpointHeader =
            serde_json::from_slice(header_bytes).map_err(|e| Error::Format(format!("malformed header: {e}")))?;
        let payload = &bytes[header_end..];

        let specs = header.architecture.param_specs();
        if specs.len() != header.tensors.len() {
            return Err(Error::Integrity(format!(
                "architecture has {} tensors, table lists {}",
                specs.len(),
                header.tensors.len()
            )));
        }
        let mut expected_offset = 0u64;
        let mut params = Vec::with_capacity(specs.len());
        for ((name, shape), e) in specs.iter().zip(&header.tensors) {
            if &e.name != name || &e.shape != shape {
                return Err(Error::Integrity(format!(
                    "table entry {} {:?} does not match architecture tensor {name} {shape:?}",
                    e.name, e.shape
                )));
            }
            let product: u64 = e.shape.iter().map(|&d| d as u64).product();
            if product != e.len {
                return Err(Error::Integrity(format!("{}: shape product {product} ≠ declared length {}", e.name, e.len)));
            }
            if e.offset != expected_offset {
                return Err(Error::Integrity(format!("{}: offset {} ≠ expected {expected_offset}", e.name, e.offset)));
            }
            let end = e.offset + 4 * e.len;
            if end > payload.len() as u64 {
                return Err(Error::Truncated(format!("{}: payload ends at byte {}, need {end}", e.name, payload.len())));
            }
            let data: Vec<f32> = payload[e.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            params.push(Tensor::from_vec(&e.shape, data)?);
            expected_offset = end;
        }
        if expected_offset != payload.len() as u64 {
            return Err(Error::Integrity(format!(
                "payload has {} bytes, table accounts for {expected_offset}",
                payload.len()
            )));
        }
        let net = Network::from_params(header.architecture, params)?;
        ModelCheckpoint::new(net, header.input, header.metadata).map_err(|e| Error::Integrity(e.to_string()))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        ModelCheckpoint::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    ModelCheckpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::StftConfig;

    fn sample() -> ModelCheckpoint {
        let input = InputSpec {
            clip_samples: 800,
            stft: StftConfig { window_ms: 10.0, hop_ms: 10.0, fft_size: 128, ..StftConfig::default() },
            mean: -3.25,
            std: 1.5,
            ..InputSpec::desk()
        };
        let arch = Architecture::toy(input.feature_shape(), 4);
        let net = Network::<f32>::init(arch, 5).unwrap();
        let meta = TrainingMeta { seed: 5, steps: 3, classes: vec!["a".into(); 4], ..TrainingMeta::default() };
        ModelCheckpoint::new(net, input, meta).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        for (a, b) in c.net.params().iter().zip(back.net.params()) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn meta_floats_survive_exactly() {
        let mut c = sample();
        // Arbitrary f64s: a shortest-repr printer paired with a fast,
        // inexact parser loses the last bit on a fair share of these.
        let mut x = 0.1234567890123f64;
        c.meta.loss_history_tail = (0..200).map(|_| { x = (x * 3.7 + 0.31).fract(); x * 1.7 }).collect();
        c.meta.initial_loss = Some(1.1778923456789012);
        c.meta.final_loss = Some(0.38212345678901234);
        c.input.mean = -2.718281828459045e-3;
        let back = ModelCheckpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn file_round_trip() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.nlg");
        save_checkpoint(&c, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), c);
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

    #[test]
    fn corrupted_fixtures_map_to_error_classes() {
        let bytes = sample().to_bytes().unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(ModelCheckpoint::from_bytes(&bad_magic), Err(Error::Format(_))));

        let v2 = rewrite_header(&bytes, |h| h["format_version"] = 2.into());
        assert!(matches!(ModelCheckpoint::from_bytes(&v2), Err(Error::Version { found: 2, expected: 1 })));

        assert!(matches!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
        assert!(matches!(ModelCheckpoint::from_bytes(&bytes[..20]), Err(Error::Truncated(_))));

        let wrong_len = rewrite_header(&bytes, |h| h["tensors"][0]["len"] = 7.into());
        assert!(matches!(ModelCheckpoint::from_bytes(&wrong_len), Err(Error::Integrity(_))));

        let wrong_shape = rewrite_header(&bytes, |h| h["tensors"][0]["shape"][0] = 99.into());
        assert!(matches!(ModelCheckpoint::from_bytes(&wrong_shape), Err(Error::Integrity(_))));

        let mut trailing = bytes.clone();
        trailing.extend_from_slice(&[0; 4]);
        assert!(matches!(ModelCheckpoint::from_bytes(&trailing), Err(Error::Integrity(_))));

        let mut garbage = bytes[..16].to_vec();
        garbage.extend_from_slice(&vec![b'{'; bytes.len() - 16]);
        assert!(matches!(ModelCheckpoint::from_bytes(&garbage), Err(Error::Format(_))));
    }
}
