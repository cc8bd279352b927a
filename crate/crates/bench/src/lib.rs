//! Shared benchmark fixtures.

use hltm_core::corpus::{Corpus, SyntheticConfig};
use hltm_core::model::{Backend, Model, TrainConfig};

/// A synthetic corpus at roughly a tenth of desk scale.
pub fn bench_corpus() -> Corpus {
    SyntheticConfig { n_categories: 6, docs_per_category: 40, vocab_size: 600, doc_length: 80, seed: 7, ..SyntheticConfig::default() }
        .generate()
        .expect("valid synthetic config")
}

/// A briefly trained model to refine from.
pub fn trained(backend: Backend, corpus: &Corpus, k: usize) -> Model {
    let cfg = TrainConfig { gibbs_sweeps: 50, em_iterations: 10, ..TrainConfig::default() };
    Model::train(backend, corpus, k, 3, &cfg).expect("training succeeds")
}
