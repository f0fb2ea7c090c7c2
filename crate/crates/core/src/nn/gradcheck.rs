use rand::Rng as _;

use crate::error::Result;
use crate::rng::Rng;

use super::{Network, Tensor};

/// Anything with a scalar loss over a flat parameter vector and an
/// analytic gradient.
pub trait Objective {
    fn num_params(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, value: f64);
    fn loss(&self) -> Result<f64>;
    fn gradient(&self) -> Result<Vec<f64>>;
    /// Loss plus an identifier of the smooth piece the parameters lie in,
    /// for objectives with kinks (ReLU, max pooling). `None` means smooth.
    fn loss_and_piece(&self) -> Result<(f64, Option<u64>)> {
        Ok((self.loss()?, None))
    }
    /// Parameter groups (e.g. tensors) to sample from evenly.
    fn groups(&self) -> Vec<std::ops::Range<usize>> {
        vec![0..self.num_params()]
    }
}

/// A network in `f64` evaluated on a fixed batch with dropout disabled.
pub struct NetworkObjective {
    pub net: Network<f64>,
    pub input: Tensor<f64>,
    pub targets: Tensor<f64>,
    offsets: Vec<usize>,
}

impl NetworkObjective {
    pub fn new(net: Network<f64>, input: Tensor<f64>, targets: Tensor<f64>) -> Self {
        let mut offsets = vec![0];
        for p in net.params() {
            offsets.push(offsets.last().unwrap() + p.len());
        }
        NetworkObjective { net, input, targets, offsets }
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let t = self.offsets.partition_point(|&o| o <= i) - 1;
        (t, i - self.offsets[t])
    }
}

impl Objective for NetworkObjective {
    fn num_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn param(&self, i: usize) -> f64 {
        let (t, j) = self.locate(i);
        self.net.params()[t].data()[j]
    }

    fn set_param(&mut self, i: usize, value: f64) {
        let (t, j) = self.locate(i);
        self.net.params_mut()[t].data_mut()[j] = value;
    }

    fn loss(&self) -> Result<f64> {
        self.net.loss(&self.input, &self.targets)
    }

    fn gradient(&self) -> Result<Vec<f64>> {
        let (_, grads) = self.net.loss_and_grad(&self.input, &self.targets, None)?;
        Ok(grads.into_iter().flat_map(Tensor::into_data).collect())
    }

    fn loss_and_piece(&self) -> Result<(f64, Option<u64>)> {
        let (l, p) = self.net.loss_and_kink_pattern(&self.input, &self.targets)?;
        Ok((l, Some(p)))
    }

    fn groups(&self) -> Vec<std::ops::Range<usize>> {
        self.offsets.windows(2).map(|w| w[0]..w[1]).collect()
    }
}

/// Inputs uniform in [-1, 1) and multi-hot targets with class 0 always on
/// and every other class on with probability 1/4.
pub fn random_batch(input_shape: [usize; 3], n: usize, classes: usize, rng: &mut Rng) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let mut shape = vec![n];
    shape.extend_from_slice(&input_shape);
    let len: usize = shape.iter().product();
    let x = Tensor::from_vec(&shape, (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())?;
    let y = Tensor::from_vec(
        &[n, classes],
        (0..n * classes).map(|i| if i % classes == 0 || rng.random::<f64>() < 0.25 { 1.0 } else { 0.0 }).collect(),
    )?;
    Ok((x, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the parameter with the largest error.
    pub worst_param: usize,
    pub checked: usize,
    /// Differences retried with a smaller step because a kink was crossed.
    pub kink_retries: usize,
    /// Draws abandoned because every step size crossed a kink.
    pub skipped: usize,
}

/// Denominator floor for the relative error; keeps parameters whose true
/// gradient is ~0 from reporting roundoff as a large relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;
/// Step shrinks (by 10x each) tried when a difference straddles a kink.
pub const KINK_SHRINKS: usize = 3;

/// Compares backprop against central differences `(f(θ+ε) − f(θ−ε)) / 2ε`
/// on `samples` parameters drawn round-robin across parameter groups.
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
///
/// ReLU and max pooling make the loss piecewise smooth. A central
/// difference whose endpoints fall in a different piece than `θ` measures
/// the kink, not the gradient, so it is retried with `ε/10` up to
/// [`KINK_SHRINKS`] times; if every step crosses, a new parameter is drawn.
pub fn gradient_check<O: Objective>(obj: &mut O, samples: usize, eps: f64, rng: &mut Rng) -> Result<GradCheckReport> {
    let analytic = obj.gradient()?;
    let (_, piece) = obj.loss_and_piece()?;
    let groups: Vec<_> = obj.groups().into_iter().filter(|g| !g.is_empty()).collect();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: 0, checked: 0, kink_retries: 0, skipped: 0 };
    let mut draw = 0;
    while report.checked < samples {
        if report.skipped > samples * 10 {
            return Err(crate::error::Error::invalid("gradient check: nearly every difference crosses a kink"));
        }
        let g = &groups[draw % groups.len()];
        draw += 1;
        let i = rng.random_range(g.clone());
        let orig = obj.param(i);
        let mut step = eps;
        let mut numeric = None;
        for attempt in 0..=KINK_SHRINKS {
            obj.set_param(i, orig + step);
            let (plus, p_plus) = obj.loss_and_piece()?;
            obj.set_param(i, orig - step);
            let (minus, p_minus) = obj.loss_and_piece()?;
            obj.set_param(i, orig);
            if p_plus == piece && p_minus == piece {
                numeric = Some((plus - minus) / (2.0 * step));
                break;
            }
            if attempt < KINK_SHRINKS {
                report.kink_retries += 1;
            }
            step /= 10.0;
        }
        let Some(numeric) = numeric else {
            report.skipped += 1;
            continue;
        };
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_param = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, LayerSpec};
    use crate::rng::seeded;

    fn batch(shape: [usize; 3], n: usize, classes: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = seeded(seed);
        let len = n * shape.iter().product::<usize>();
        let mut s = vec![n];
        s.extend_from_slice(&shape);
        let x = Tensor::from_vec(&s, (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap();
        let y = Tensor::from_vec(
            &[n, classes],
            (0..n * classes).map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        (x, y)
    }

    #[test]
    fn toy_network_passes() {
        let arch = Architecture::toy([2, 12, 10], 4);
        let net = Network::<f64>::init(arch, 11).unwrap();
        let (x, y) = batch([2, 12, 10], 3, 4, 12);
        let mut obj = NetworkObjective::new(net, x, y);
        let r = gradient_check(&mut obj, 50, 1e-5, &mut seeded(13)).unwrap();
        assert_eq!(r.checked, 50);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn single_dense_is_near_exact() {
        let arch = Architecture {
            name: "linear".into(),
            input_shape: [1, 3, 4],
            layers: vec![LayerSpec::Dense { in_features: 12, units: 5 }, LayerSpec::Softmax],
            embedding_layer: 0,
        };
        let net = Network::<f64>::init(arch, 21).unwrap();
        let (x, y) = batch([1, 3, 4], 4, 5, 22);
        let mut obj = NetworkObjective::new(net, x, y);
        let r = gradient_check(&mut obj, 60, 1e-5, &mut seeded(23)).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    /// Wraps an objective and scales one parameter group's gradient.
    struct Corrupted(NetworkObjective);

    impl Objective for Corrupted {
        fn num_params(&self) -> usize {
            self.0.num_params()
        }
        fn param(&self, i: usize) -> f64 {
            self.0.param(i)
        }
        fn set_param(&mut self, i: usize, v: f64) {
            self.0.set_param(i, v)
        }
        fn loss(&self) -> Result<f64> {
            self.0.loss()
        }
        fn gradient(&self) -> Result<Vec<f64>> {
            let mut g = self.0.gradient()?;
            for v in &mut g[self.0.groups()[0].clone()] {
                *v *= 1.5;
            }
            Ok(g)
        }
        fn groups(&self) -> Vec<std::ops::Range<usize>> {
            self.0.groups()
        }
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let arch = Architecture::toy([1, 12, 10], 3);
        let net = Network::<f64>::init(arch, 31).unwrap();
        let (x, y) = batch([1, 12, 10], 2, 3, 32);
        let mut obj = Corrupted(NetworkObjective::new(net, x, y));
        let r = gradient_check(&mut obj, 40, 1e-5, &mut seeded(33)).unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
    }

    /// `|θ₀ − 3e-6| + θ₁²` at θ = 0: a 1e-5 step straddles the kink.
    struct Kinked(Vec<f64>);

    impl Objective for Kinked {
        fn num_params(&self) -> usize {
            2
        }
        fn param(&self, i: usize) -> f64 {
            self.0[i]
        }
        fn set_param(&mut self, i: usize, v: f64) {
            self.0[i] = v
        }
        fn loss(&self) -> Result<f64> {
            Ok((self.0[0] - 3e-6).abs() + self.0[1] * self.0[1])
        }
        fn gradient(&self) -> Result<Vec<f64>> {
            Ok(vec![(self.0[0] - 3e-6).signum(), 2.0 * self.0[1]])
        }
        fn loss_and_piece(&self) -> Result<(f64, Option<u64>)> {
            Ok((self.loss()?, Some((self.0[0] > 3e-6) as u64)))
        }
    }

    #[test]
    fn kink_crossings_are_retried() {
        let mut obj = Kinked(vec![0.0, 0.5]);
        let r = gradient_check(&mut obj, 20, 1e-5, &mut seeded(41)).unwrap();
        assert!(r.kink_retries >= 1, "{r:?}");
        assert_eq!(r.skipped, 0);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }
}
