//! 8-bit grayscale PGM (binary `P5`) rendering of matrices.
//!
//! Matrix row `r` becomes image row `r` (top to bottom) and each value maps
//! to `round(255 · norm(v))`. A constant range normalises to 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    /// `10·log10(v / max)` clamped below at `floor_db`.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    Gray,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    Global,
    PerRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSpec {
    pub scale: Scale,
    pub floor_db: f64,
    pub colormap: Colormap,
    pub normalize: Normalize,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec { scale: Scale::Linear, floor_db: -80.0, colormap: Colormap::Gray, normalize: Normalize::Global }
    }
}

impl RenderSpec {
    pub fn log(floor_db: f64) -> Self {
        RenderSpec { scale: Scale::Log, floor_db, ..RenderSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == Scale::Log && !(self.floor_db < 0.0) {
            return Err(Error::invalid(format!("log scale needs floor_db < 0, got {}", self.floor_db)));
        }
        Ok(())
    }
}

/// Maps `values` to [0, 1] in place of a shared normalisation group.
fn normalize(values: &[f64], spec: &RenderSpec) -> Vec<f64> {
    match spec.scale {
        Scale::Linear => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            values.iter().map(|&v| if range > 0.0 { (v - lo) / range } else { 0.0 }).collect()
        }
        Scale::Log => {
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let floor = spec.floor_db;
            let db: Vec<f64> = values
                .iter()
                .map(|&v| if max > 0.0 && v > 0.0 { (10.0 * (v / max).log10()).max(floor) } else { floor })
                .collect();
            let lo = db.iter().copied().fold(f64::INFINITY, f64::min);
            if lo == 0.0 && db.iter().all(|&d| d == 0.0) {
                return vec![0.0; values.len()];
            }
            db.iter().map(|&d| (d - floor) / -floor).collect()
        }
    }
}

/// Row-major 8-bit pixels for `m`.
pub fn render_pixels(m: &Matrix, spec: &RenderSpec) -> Result<Vec<u8>> {
    spec.validate()?;
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::invalid("cannot render an empty matrix"));
    }
    if !m.is_finite() {
        return Err(Error::invalid("cannot render a matrix with non-finite values"));
    }
    let norm = match spec.normalize {
        Normalize::Global => normalize(m.data(), spec),
        Normalize::PerRow => (0..m.rows()).flat_map(|r| normalize(m.row(r), spec)).collect(),
    };
    Ok(norm.into_iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8).collect())
}

/// Complete `P5` file contents.
pub fn render_pgm(m: &Matrix, spec: &RenderSpec) -> Result<Vec<u8>> {
    let pixels = render_pixels(m, spec)?;
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn render_matrix(m: &Matrix, spec: &RenderSpec, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_pgm(m, spec)?)?;
    Ok(())
}

/// Parses a `P5` image back into `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated("PGM header incomplete".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Format("bad PGM header".into()))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Format("expected an 8-bit P5 image".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM dimension `{s}`")));
    let (w, h) = (parse(fields[1])?, parse(fields[2])?);
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != w * h {
        return Err(Error::Integrity(format!("{w}x{h} image has {} payload bytes", data.len())));
    }
    Ok((w, h, data.to_vec()))
}
