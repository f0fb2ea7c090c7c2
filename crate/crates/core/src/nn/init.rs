use rand::distr::{Distribution, Uniform};

use crate::rng::Rng;

use super::{Scalar, Tensor};

/// `(fan_in, fan_out)` for a weight shape: `[F, C, kh, kw]` gives
/// `(C·kh·kw, F·kh·kw)`, `[D, U]` gives `(D, U)`.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match *shape {
        [f, c, kh, kw] => (c * kh * kw, f * kh * kw),
        [d, u] => (d, u),
        [n] => (n, n),
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    }
}

/// Glorot/Xavier uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fi, fo) = fans(shape);
    (6.0 / (fi + fo) as f64).sqrt()
}

pub fn xavier_init<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let a = xavier_bound(shape);
    let dist = Uniform::new_inclusive(-a, a).expect("finite xavier bound");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::from_f64(dist.sample(rng))).collect()).expect("xavier shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn conv_fans() {
        assert_eq!(fans(&[16, 8, 3, 3]), (72, 144));
        assert_eq!(fans(&[3360, 500]), (3360, 500));
    }

    #[test]
    fn support_mean_and_variance() {
        let shape = [200, 500];
        let a = xavier_bound(&shape);
        let t: Tensor<f64> = xavier_init(&shape, &mut seeded(9));
        assert_eq!(t.len(), 100_000);
        assert!(t.data().iter().all(|v| v.abs() <= a));
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        // Standard error of the mean is a / sqrt(3n) ≈ 0.0018 a.
        assert!(mean.abs() <= 0.01 * a, "mean {mean}");
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / 700.0;
        assert!((var / expected - 1.0).abs() < 0.05, "var {var} vs {expected}");
    }
}
