use neuralogram::rng::seeded;
use neuralogram::transforms::{apply_matrix, learn_transform, mel_filterbank, LinearTransform};
use neuralogram::Matrix;
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = seeded(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn apply_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, cols in 1usize..20, seed in any::<u64>(), mel in any::<bool>()) {
        let t = if mel {
            mel_filterbank(40, 129, 8000).unwrap()
        } else {
            LinearTransform::new("random", random_matrix(17, 129, seed ^ 1)).unwrap()
        };
        let x = random_matrix(129, cols, seed);
        let y = random_matrix(129, cols, seed.wrapping_add(7));
        let mix = Matrix::from_fn(129, cols, |r, c| a * x.get(r, c) + b * y.get(r, c));
        let lhs = apply_matrix(&t, &mix).unwrap();
        let (tx, ty) = (apply_matrix(&t, &x).unwrap(), apply_matrix(&t, &y).unwrap());
        for r in 0..lhs.rows() {
            for c in 0..cols {
                let rhs = a * tx.get(r, c) + b * ty.get(r, c);
                prop_assert!((lhs.get(r, c) - rhs).abs() <= 1e-9, "({}, {}): {} vs {}", r, c, lhs.get(r, c), rhs);
            }
        }
    }
}

/// Relative Frobenius error of the transform learned from `n` noisy pairs.
fn noisy_recovery_error(t: &LinearTransform, n: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..129).map(|_| rng.random::<f64>()).collect()).collect();
    let targets: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| {
            let y = apply_matrix(t, &Matrix::from_columns(std::slice::from_ref(x)).unwrap()).unwrap();
            y.data().iter().map(|v| v + noise.sample(&mut rng)).collect()
        })
        .collect();
    let learned = learn_transform(&inputs, &targets, 0.0).unwrap();
    let diff = Matrix::from_fn(40, 129, |r, c| learned.matrix.get(r, c) - t.matrix.get(r, c));
    diff.frobenius_norm() / t.matrix.frobenius_norm()
}

#[test]
fn recovery_error_shrinks_with_sample_count() {
    let mel = mel_filterbank(40, 129, 8000).unwrap();
    let counts = [160, 320, 640, 1280, 2560];
    let errors: Vec<f64> = counts
        .iter()
        .map(|&n| (0..3).map(|s| noisy_recovery_error(&mel, n, 100 + s)).sum::<f64>() / 3.0)
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] < w[0], "errors not decreasing: {errors:?}");
    }
    // Least squares error falls roughly as 1/sqrt(n - n_bins).
    assert!(errors[4] < errors[0] / 4.0, "{errors:?}");
}
