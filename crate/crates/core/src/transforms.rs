//! Spectrogram variants as explicit linear maps of the power spectrum.
//!
//! A [`LinearTransform`] is an `M × n_bins` matrix applied to every
//! spectrogram column. Mel and chroma builders are provided; any other map
//! (e.g. a constant-Q approximation) can be supplied as a raw matrix or
//! learned from example pairs with [`learn_transform`].

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::Spectrogram;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransform {
    pub name: String,
    pub matrix: Matrix,
}

impl LinearTransform {
    pub fn new(name: impl Into<String>, matrix: Matrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::invalid("transform has non-finite entries"));
        }
        Ok(LinearTransform { name: name.into(), matrix })
    }

    pub fn identity(n_bins: usize) -> Self {
        LinearTransform { name: "identity".into(), matrix: Matrix::identity(n_bins) }
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Row-major CSV: a `rows,cols` header line, the dimensions, then one
    /// line per row. Values use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let (rows, cols) = self.matrix.shape();
        let mut out = format!("rows,cols\n{rows},{cols}\n");
        for r in 0..rows {
            let line: Vec<String> = self.matrix.row(r).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn from_csv(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("rows,cols") {
            return Err(Error::Format("missing `rows,cols` header".into()));
        }
        let dims = lines.next().ok_or_else(|| Error::Format("missing dimensions line".into()))?;
        let dims: Vec<usize> = dims
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Format(format!("bad dimension `{s}`"))))
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Format("dimensions line must be `rows,cols`".into()));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            for field in line.split(',') {
                data.push(
                    field.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad value `{field}`")))?,
                );
            }
        }
        LinearTransform::new(name, Matrix::from_vec(rows, cols, data)?)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn bin_frequency(k: usize, n_bins: usize, sample_rate: u32) -> f64 {
    let fft_size = 2 * (n_bins - 1);
    k as f64 * sample_rate as f64 / fft_size as f64
}

/// Triangular, peak-1 mel filters with centres equally spaced in mel
/// between 0 Hz and Nyquist.
pub fn mel_filterbank(n_mels: usize, n_bins: usize, sample_rate: u32) -> Result<LinearTransform> {
    if n_mels == 0 {
        return Err(Error::invalid("n_mels must be at least 1"));
    }
    if n_bins < 2 {
        return Err(Error::invalid("n_bins must be at least 2"));
    }
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> =
        (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let mut m = Matrix::zeros(n_mels, n_bins);
    for band in 0..n_mels {
        let (lo, mid, hi) = (edges[band], edges[band + 1], edges[band + 2]);
        let mut any = false;
        for k in 0..n_bins {
            let f = bin_frequency(k, n_bins, sample_rate);
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            if w > 0.0 {
                any = true;
                m.set(band, k, w);
            }
        }
        if !any {
            return Err(Error::EmptyFilter { band });
        }
    }
    LinearTransform::new(format!("mel{n_mels}"), m)
}

/// 12 × n_bins 0/1 pitch-class folding; DC maps to no class.
pub fn chroma_matrix(n_bins: usize, sample_rate: u32, ref_hz: f64) -> Result<LinearTransform> {
    if !(ref_hz > 0.0) {
        return Err(Error::invalid("reference frequency must be positive"));
    }
    if n_bins < 2 {
        return Err(Error::invalid("n_bins must be at least 2"));
    }
    let mut m = Matrix::zeros(12, n_bins);
    for k in 1..n_bins {
        let f = bin_frequency(k, n_bins, sample_rate);
        let class = (12.0 * (f / ref_hz).log2()).round().rem_euclid(12.0) as usize;
        m.set(class, k, 1.0);
    }
    LinearTransform::new("chroma", m)
}

/// `T · X` applied column-wise to a matrix with one spectrum per column.
pub fn apply_matrix(t: &LinearTransform, spectra: &Matrix) -> Result<Matrix> {
    if t.input_dim() != spectra.rows() {
        return Err(Error::shape(format!(
            "transform expects {} bins, spectrogram has {}",
            t.input_dim(),
            spectra.rows()
        )));
    }
    t.matrix.matmul(spectra)
}

pub fn apply_transform(t: &LinearTransform, spec: &Spectrogram) -> Result<Matrix> {
    apply_matrix(t, &spec.data)
}

/// Solves `A x = b` for symmetric positive-definite `A` in place by
/// Cholesky factorisation; pivots below `1e-10 · max diag` are treated as
/// singular.
fn cholesky_solve(mut a: Matrix, mut b: Matrix) -> Result<Matrix> {
    let n = a.rows();
    let scale = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= a.get(j, k) * a.get(j, k);
        }
        if !(d > tol) {
            return Err(Error::Singular { column: j, pivot: d });
        }
        let d = d.sqrt();
        a.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= a.get(i, k) * a.get(j, k);
            }
            a.set(i, j, s / d);
        }
    }
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = b.get(i, c);
            for k in 0..i {
                s -= a.get(i, k) * b.get(k, c);
            }
            b.set(i, c, s / a.get(i, i));
        }
        for i in (0..n).rev() {
            let mut s = b.get(i, c);
            for k in i + 1..n {
                s -= a.get(k, i) * b.get(k, c);
            }
            b.set(i, c, s / a.get(i, i));
        }
    }
    Ok(b)
}

/// Least-squares estimate of the map taking `inputs[i]` to `targets[i]`:
/// minimises `Σ‖T x − y‖² + ridge ‖T‖²_F` through the normal equations.
pub fn learn_transform(inputs: &[Vec<f64>], targets: &[Vec<f64>], ridge: f64) -> Result<LinearTransform> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::invalid(format!(
            "need matching nonempty input/target lists, got {} and {}",
            inputs.len(),
            targets.len()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be nonnegative"));
    }
    let x = Matrix::from_columns(inputs)?;
    let y = Matrix::from_columns(targets)?;
    let xt = x.transpose();
    let mut gram = x.matmul(&xt)?;
    for i in 0..gram.rows() {
        gram.set(i, i, gram.get(i, i) + ridge);
    }
    let rhs = x.matmul(&y.transpose())?;
    let t_transposed = cholesky_solve(gram, rhs)?;
    LinearTransform::new("learned", t_transposed.transpose())
}
