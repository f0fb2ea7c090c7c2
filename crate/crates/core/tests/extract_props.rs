mod common;

use std::sync::OnceLock;

use neuralogram::checkpoint::ModelCheckpoint;
use neuralogram::extract::{embed_clip, extract, frame_count, NeuralogramConfig};
use neuralogram::rng::seeded;
use neuralogram::signal::Waveform;
use proptest::prelude::*;
use rand::Rng as _;

fn model() -> &'static ModelCheckpoint {
    static M: OnceLock<ModelCheckpoint> = OnceLock::new();
    M.get_or_init(|| common::untrained_desk(5, 64))
}

fn noise(dur: f64, seed: u64) -> Waveform {
    let mut rng = seeded(seed);
    let n = (dur * 8000.0).round() as usize;
    Waveform::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), 8000).unwrap()
}

fn cfg(hop_s: f64) -> NeuralogramConfig {
    NeuralogramConfig { hop_s, ..NeuralogramConfig::default() }
}

#[test]
fn columns_equal_standalone_embeddings() {
    let m = model();
    let wave = noise(5.0, 1);
    let ng = extract(&wave, m, &cfg(0.5)).unwrap();
    assert_eq!(ng.n_frames(), 7);
    let layer = m.architecture().embedding_layer;
    for j in 0..ng.n_frames() {
        let clip = wave.slice(j * 4000, 16000).unwrap();
        let standalone = embed_clip(m, &clip, layer).unwrap();
        let column = ng.data.column(j);
        assert!(column.iter().zip(&standalone).all(|(a, b)| a.to_bits() == b.to_bits()), "column {j}");
    }
}

#[test]
fn repeated_extraction_is_bit_identical() {
    let wave = noise(4.0, 2);
    let a = extract(&wave, model(), &cfg(0.25)).unwrap();
    let b = extract(&wave, model(), &cfg(0.25)).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}

#[test]
fn silence_gives_identical_columns() {
    let ng = extract(&Waveform::zeros(80000, 8000), model(), &cfg(0.5)).unwrap();
    assert_eq!(ng.n_frames(), 17);
    let first = ng.data.column(0);
    for j in 1..ng.n_frames() {
        assert_eq!(ng.data.column(j), first, "column {j}");
    }
}

#[test]
fn hop_periodic_input_gives_equal_columns() {
    // A random pattern exactly one hop long, tiled.
    let period = noise(0.5, 3).into_samples();
    let samples: Vec<f64> = period.iter().copied().cycle().take(8 * 8000).collect();
    let ng = extract(&Waveform::new(samples, 8000).unwrap(), model(), &cfg(0.5)).unwrap();
    let first = ng.data.column(0);
    for j in 1..ng.n_frames() {
        for (a, b) in ng.data.column(j).iter().zip(&first) {
            assert!((a - b).abs() <= 1e-5, "column {j}: {a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn frame_count_law_holds(dur in 2.0f64..5.0, hop in 0.1f64..2.0, seed in any::<u64>()) {
        let wave = noise(dur, seed);
        let ng = extract(&wave, model(), &cfg(hop)).unwrap();
        let expected = frame_count(wave.duration(), 2.0, hop).unwrap();
        prop_assert_eq!(ng.n_frames(), expected);
        prop_assert_eq!(ng.embedding_size(), 64);
        prop_assert!(ng.data.is_finite());
    }
}
