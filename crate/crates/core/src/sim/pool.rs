//! Pre-trained models that simulation runs start from.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{Backend, Model, ModelState, TopicView, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    /// Topic count of the models used by create and split.
    pub small_k: usize,
    /// Topic count of the models used by every other refinement.
    pub large_k: usize,
    pub models_per_size: usize,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { small_k: 10, large_k: 20, models_per_size: 20, seed: 0 }
    }
}

/// SplitMix64 finalizer; derives independent stream seeds from structured keys.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    mix_seed(mix_seed(master ^ mix_seed(a)) ^ b)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolEntry {
    pub k: usize,
    pub seed: u64,
    pub state: ModelState,
}

impl PoolEntry {
    pub fn model(&self, backend: Backend) -> Model {
        Model { backend, state: self.state.clone() }
    }
}

/// One Gibbs pool serves both Gibbs backends: before any refinement their
/// states are identical for matched seeds. The variational pool uses the
/// same seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelPool {
    pub config: PoolConfig,
    pub gibbs: Vec<PoolEntry>,
    pub vb: Vec<PoolEntry>,
}

impl ModelPool {
    /// Trains the pools needed by `backends`, in parallel.
    pub fn train(corpus: &Corpus, config: &PoolConfig, train: &TrainConfig, backends: &[Backend]) -> Result<Self> {
        let mut jobs = vec![];
        let engines = [
            (Backend::InfoGibbs, backends.iter().any(|b| b.is_gibbs())),
            (Backend::InfoVb, backends.contains(&Backend::InfoVb)),
        ];
        for (engine, wanted) in engines {
            if !wanted {
                continue;
            }
            for (size, k) in [config.small_k, config.large_k].into_iter().enumerate() {
                for i in 0..config.models_per_size {
                    jobs.push((engine, k, derive_seed(config.seed, size as u64, i as u64)));
                }
            }
        }
        let trained = jobs
            .into_par_iter()
            .map(|(engine, k, seed)| {
                let model = Model::train(engine, corpus, k, seed, train)?;
                Ok((engine, PoolEntry { k, seed, state: model.state }))
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut gibbs, mut vb) = (vec![], vec![]);
        for (engine, entry) in trained {
            if engine.is_gibbs() {
                gibbs.push(entry);
            } else {
                vb.push(entry);
            }
        }
        Ok(ModelPool { config: config.clone(), gibbs, vb })
    }

    /// Entries usable by `backend` with the small or large topic count.
    pub fn entries(&self, backend: Backend, small: bool) -> Vec<&PoolEntry> {
        let k = if small { self.config.small_k } else { self.config.large_k };
        let list = if backend.is_gibbs() { &self.gibbs } else { &self.vb };
        list.iter().filter(|e| e.k == k).collect()
    }

    /// Checks that every pooled state fits `corpus`.
    pub fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        for e in self.gibbs.iter().chain(&self.vb) {
            if e.state.num_docs() != corpus.num_docs() || e.state.vocab_size() != corpus.vocab_size() {
                return Err(Error::InvalidArgument("pooled model does not match the corpus".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}
