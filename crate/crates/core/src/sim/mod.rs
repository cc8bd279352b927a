//! Simulated users and the experiment harness.

pub mod experiment;
pub mod kruskal;
pub mod logreg;
pub mod pool;
pub mod users;

pub use experiment::{
    run_experiment, summarize, CellSummary, CorpusSource, ExperimentConfig, ExperimentOutput, ExperimentRecord, MeanSd,
    Workbench,
};
pub use kruskal::{kruskal_wallis, KruskalWallis};
pub use logreg::{representative_words, CategoryWordIndex, LogRegConfig};
pub use pool::{ModelPool, PoolConfig};
pub use users::{good_refinement, random_refinement, GoodUserContext, TopicProfile, UserConfig, UserKind};
