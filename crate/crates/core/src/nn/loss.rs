use crate::error::{Error, Result};

use super::ops::softmax;
use super::{Scalar, Tensor};

/// `L = (1/N) Σₙ ‖softmax(zₙ) − yₙ‖²` and `∂L/∂z`.
///
/// Targets are multi-hot. With more than one active label the softmax
/// output cannot match the target exactly; see [`multi_hot_loss_floor`].
pub fn euclid_softmax_loss<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if logits.shape() != targets.shape() || logits.shape().len() != 2 {
        return Err(Error::shape(format!(
            "logits {:?} and targets {:?} must be equal [N, K]",
            logits.shape(),
            targets.shape()
        )));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let s = softmax(logits);
    let mut loss = 0.0;
    let scale = T::from_f64(2.0 / n as f64);
    let mut grad = Tensor::zeros(logits.shape());
    for ((srow, yrow), grow) in s.data().chunks(k).zip(targets.data().chunks(k)).zip(grad.data_mut().chunks_mut(k)) {
        let mut dot = T::zero();
        for ((&sv, &yv), g) in srow.iter().zip(yrow).zip(grow.iter_mut()) {
            let d = sv - yv;
            loss += d.as_f64() * d.as_f64();
            *g = scale * d;
            dot = dot + *g * sv;
        }
        for (g, &sv) in grow.iter_mut().zip(srow) {
            *g = sv * (*g - dot);
        }
    }
    Ok((loss / n as f64, grad))
}

/// Infimum of `‖s − y‖²` over the probability simplex for a target with
/// `active` ones: `(k − 1)² / k`, attained by spreading mass evenly over the
/// active labels.
pub fn multi_hot_loss_floor(active: usize) -> f64 {
    if active == 0 {
        return 1.0;
    }
    let k = active as f64;
    (k - 1.0) * (k - 1.0) / k
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::rng::seeded;

    #[test]
    fn half_half_against_one_hot() {
        let z = Tensor::<f64>::zeros(&[1, 2]);
        let y = Tensor::from_f64_slice(&[1, 2], &[1.0, 0.0]).unwrap();
        let (l, _) = euclid_softmax_loss(&z, &y).unwrap();
        assert!((l - 0.5).abs() < 1e-15);
    }

    #[test]
    fn peaked_logits_vanish() {
        let z = Tensor::<f64>::from_f64_slice(&[1, 4], &[40.0, 0.0, 0.0, 0.0]).unwrap();
        let y = Tensor::from_f64_slice(&[1, 4], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(euclid_softmax_loss(&z, &y).unwrap().0 < 1e-30);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded(3);
        let z = Tensor::<f64>::from_vec(&[3, 7], (0..21).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).unwrap();
        let y = Tensor::from_vec(&[3, 7], (0..21).map(|i| if i % 3 == 0 || i == 5 { 1.0 } else { 0.0 }).collect()).unwrap();
        let (_, g) = euclid_softmax_loss(&z, &y).unwrap();
        let eps = 1e-5;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp.data_mut()[i] += eps;
            let mut zm = z.clone();
            zm.data_mut()[i] -= eps;
            let num = (euclid_softmax_loss(&zp, &y).unwrap().0 - euclid_softmax_loss(&zm, &y).unwrap().0) / (2.0 * eps);
            let a = g.data()[i];
            assert!((a - num).abs() / a.abs().max(num.abs()).max(1e-8) < 1e-4, "index {i}: {a} vs {num}");
        }
    }

    #[test]
    fn loss_never_below_floor() {
        let mut rng = seeded(4);
        for active in 1..=4 {
            let y: Vec<f64> = (0..6).map(|i| if i < active { 1.0 } else { 0.0 }).collect();
            let y = Tensor::from_vec(&[1, 6], y).unwrap();
            for _ in 0..200 {
                let z = Tensor::<f64>::from_vec(&[1, 6], (0..6).map(|_| rng.random::<f64>() * 20.0 - 10.0).collect()).unwrap();
                let (l, _) = euclid_softmax_loss(&z, &y).unwrap();
                assert!(l >= multi_hot_loss_floor(active) - 1e-12);
            }
        }
        assert_eq!(multi_hot_loss_floor(1), 0.0);
        assert_eq!(multi_hot_loss_floor(2), 0.5);
    }

    #[test]
    fn shape_mismatch() {
        let z = Tensor::<f64>::zeros(&[2, 3]);
        assert!(euclid_softmax_loss(&z, &Tensor::zeros(&[2, 4])).is_err());
    }
}
