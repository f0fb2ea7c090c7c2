use neuralogram::checkpoint::{ModelCheckpoint, TrainingMeta};
use neuralogram::corpus::{make_corpus, CorpusSpec};
use neuralogram::nn::{Architecture, Network};
use neuralogram::train::{fit_input_stats, InputSpec};

/// Desk network at its Xavier initialisation, input scaling fitted on a
/// few corpus clips. Records zero training steps.
pub fn untrained_desk(seed: u64, embedding: usize) -> ModelCheckpoint {
    let clips = make_corpus(&CorpusSpec { n_clips: 16, ..CorpusSpec::default() }).unwrap();
    let input = fit_input_stats(InputSpec::desk(), &clips).unwrap();
    let net = Network::<f32>::init(Architecture::desk(8, embedding), seed).unwrap();
    ModelCheckpoint::new(net, input, TrainingMeta { seed, ..TrainingMeta::default() }).unwrap()
}
