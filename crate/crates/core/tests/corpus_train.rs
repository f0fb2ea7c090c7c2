use neuralogram::checkpoint::{ModelCheckpoint, TrainingMeta};
use neuralogram::corpus::{make_clip, make_corpus, CorpusSpec, LabeledClip};
use neuralogram::nn::{adam_step, AdamConfig, AdamState, Architecture, Network, Tensor};
use neuralogram::rng::{seeded, stream_rng};
use neuralogram::train::{auc, evaluate, fit_input_stats, InputSpec};
use proptest::prelude::*;

fn spec(n_clips: usize, seed: u64) -> CorpusSpec {
    CorpusSpec { n_clips, seed, ..CorpusSpec::default() }
}

#[test]
fn class_marginals_are_near_uniform() {
    let clips = make_corpus(&spec(2000, 42)).unwrap();
    let mut counts = [0usize; 8];
    for c in &clips {
        for (k, &l) in c.labels.iter().enumerate() {
            counts[k] += l as usize;
        }
    }
    let uniform = counts.iter().sum::<usize>() as f64 / 8.0;
    for (k, &n) in counts.iter().enumerate() {
        let dev = (n as f64 - uniform).abs() / uniform;
        assert!(dev <= 0.10, "class {k}: {n} labels vs {uniform} uniform ({counts:?})");
    }
}

#[test]
fn clip_is_a_function_of_seed_and_index() {
    let small = spec(5, 9);
    let large = CorpusSpec { n_clips: 40, ..small.clone() };
    let a = make_corpus(&small).unwrap();
    let b = make_corpus(&large).unwrap();
    for i in 0..5 {
        assert_eq!(a[i], b[i]);
        assert_eq!(a[i], make_clip(&large, i).unwrap());
    }
    assert_ne!(make_clip(&spec(5, 10), 3).unwrap(), a[3]);
}

fn features(input: &InputSpec, clips: &[LabeledClip]) -> (Tensor<f32>, Tensor<f32>) {
    let f = input.featurizer().unwrap();
    let feats: Vec<Vec<f32>> = clips.iter().map(|c| f.features(&c.wave).unwrap()).collect();
    let items: Vec<&[f32]> = feats.iter().map(Vec::as_slice).collect();
    let labels: Vec<Vec<f32>> = clips.iter().map(|c| c.labels.iter().map(|&l| l as f32).collect()).collect();
    let ys: Vec<&[f32]> = labels.iter().map(Vec::as_slice).collect();
    (Tensor::stack(&items, &input.feature_shape()).unwrap(), Tensor::stack(&ys, &[8]).unwrap())
}

#[test]
fn fixed_batch_loss_falls_over_fifty_steps() {
    let clips = make_corpus(&spec(16, 42)).unwrap();
    let input = fit_input_stats(InputSpec::desk(), &clips).unwrap();
    let (x, y) = features(&input, &clips);
    let mut drops: Vec<f64> = (0..5u64)
        .map(|seed| {
            let mut net = Network::<f32>::init(Architecture::desk(8, 500), seed).unwrap();
            let mut adam = AdamState::new(AdamConfig::default(), net.params());
            let mut dropout = stream_rng(seed, 1, 0);
            let before = net.loss(&x, &y).unwrap();
            for _ in 0..50 {
                let (_, g) = net.loss_and_grad(&x, &y, Some(&mut dropout)).unwrap();
                adam_step(net.params_mut(), &g, &mut adam).unwrap();
            }
            before - net.loss(&x, &y).unwrap()
        })
        .collect();
    drops.sort_by(f64::total_cmp);
    assert!(drops[2] > 0.0, "median loss change {} ({drops:?})", -drops[2]);
}

#[test]
fn untrained_model_scores_at_chance() {
    let train = make_corpus(&spec(64, 42)).unwrap();
    let input = fit_input_stats(InputSpec::desk(), &train).unwrap();
    let net = Network::<f32>::init(Architecture::desk(8, 500), 42).unwrap();
    let ckpt = ModelCheckpoint::new(net, input, TrainingMeta::default()).unwrap();
    let heldout = make_corpus(&spec(500, 43)).unwrap();
    let r = evaluate(&ckpt, &heldout).unwrap();
    assert!((r.mean_auc - 0.5).abs() <= 0.05, "untrained mean AUC {}: {:?}", r.mean_auc, r.per_class_auc);
}

#[test]
fn chance_level_on_average_over_initialisations() {
    let train = make_corpus(&spec(64, 42)).unwrap();
    let input = fit_input_stats(InputSpec::desk(), &train).unwrap();
    let heldout = make_corpus(&spec(200, 43)).unwrap();
    let aucs: Vec<f64> = (0..8u64)
        .map(|seed| {
            let net = Network::<f32>::init(Architecture::desk(8, 500), seed).unwrap();
            let ckpt = ModelCheckpoint::new(net, input, TrainingMeta::default()).unwrap();
            evaluate(&ckpt, &heldout).unwrap().mean_auc
        })
        .collect();
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.05, "{mean} from {aucs:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_ignores_monotone_rescaling(
        scores in prop::collection::vec(-5.0f64..5.0, 2..60),
        seed in any::<u64>(),
        scale in 0.01f64..100.0,
        offset in -10.0f64..10.0,
    ) {
        use rand::Rng as _;
        let mut rng = seeded(seed);
        let truth: Vec<bool> = scores.iter().map(|_| rng.random::<bool>()).collect();
        let base = auc(&scores, &truth);
        let affine: Vec<f64> = scores.iter().map(|s| scale * s + offset).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3) + s.exp()).collect();
        prop_assert_eq!(base, auc(&affine, &truth));
        prop_assert_eq!(base, auc(&cubed, &truth));
    }
}
