//! Request and response bodies.

use serde::{Deserialize, Serialize};

use hltm_core::corpus::{PreprocessConfig, RawRecord, SyntheticConfig};
use hltm_core::metrics::ControlScore;
use hltm_core::model::{Backend, RefinementOp};

#[derive(Debug, Clone, Deserialize)]
pub struct CreateCorpus {
    pub name: Option<String>,
    pub records: Option<Vec<RawRecord>>,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub corpus_id: String,
    pub num_docs: usize,
    pub vocab_size: usize,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub corpus_id: String,
    pub backend: Backend,
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Training,
    Ready,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub corpus_id: String,
    pub backend: Backend,
    pub k: usize,
    pub seed: u64,
    pub status: SessionStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordEntry {
    pub word: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEntry {
    pub doc_id: String,
    pub probability: f64,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicView {
    pub topic: usize,
    pub words: Vec<WordEntry>,
    pub documents: Vec<DocEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicsResponse {
    pub session_id: String,
    pub backend: Backend,
    pub topics: Vec<TopicView>,
}

/// A word or document named by index or by its string form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemRef {
    Index(usize),
    Name(String),
}

/// Wire form of a refinement; resolves to a [`RefinementOp`] against the
/// session's corpus.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireOp {
    RemoveWord { topic: usize, word: ItemRef },
    AddWord { topic: usize, word: ItemRef },
    RemoveDocument { topic: usize, document: ItemRef },
    MergeTopics { topic1: usize, topic2: usize },
    SplitTopic { topic: usize, seeds: Vec<ItemRef> },
    ChangeWordOrder { topic: usize, word1: ItemRef, word2: ItemRef },
    CreateTopic { seeds: Vec<ItemRef> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub op: RefinementOp,
    pub control: ControlScore,
    pub coherence_delta: f64,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementResponse {
    pub op: RefinementOp,
    pub control: ControlScore,
    pub coherence_delta: f64,
    pub inference_steps: usize,
    pub topics: Vec<TopicView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
