//! Backend-agnostic model state: priors, constraint potentials, refinement
//! requests, and ranked topic views.

mod snapshot;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::gibbs::GibbsState;
use crate::matrix::DenseMatrix;
use crate::vb::VbState;

pub use snapshot::{read_snapshot_file, write_snapshot_file, SnapshotFile};

/// Small prior and soft-penalty base used by the refinements.
pub const EPSILON: f64 = 1e-8;
/// Prior assigned to seed words of created or split-off topics.
pub const HIGH_PRIOR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    ConstGibbs,
    InfoGibbs,
    InfoVb,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::ConstGibbs, Backend::InfoGibbs, Backend::InfoVb];

    pub fn name(self) -> &'static str {
        match self {
            Backend::ConstGibbs => "const-gibbs",
            Backend::InfoGibbs => "info-gibbs",
            Backend::InfoVb => "info-vb",
        }
    }

    pub fn is_gibbs(self) -> bool {
        !matches!(self, Backend::InfoVb)
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown backend {s:?}")))
    }
}

/// Asymmetric Dirichlet parameters: `alpha` is documents × topics, `beta` is
/// topics × words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    pub alpha: DenseMatrix,
    pub beta: DenseMatrix,
    pub default_alpha: f64,
    pub default_beta: f64,
}

impl PriorSet {
    pub fn symmetric(docs: usize, topics: usize, words: usize, alpha: f64, beta: f64) -> Self {
        PriorSet {
            alpha: DenseMatrix::filled(docs, topics, alpha),
            beta: DenseMatrix::filled(topics, words, beta),
            default_alpha: alpha,
            default_beta: beta,
        }
    }

    pub fn num_topics(&self) -> usize {
        self.beta.rows()
    }

    pub fn append_topic(&mut self) {
        self.alpha.push_col(self.default_alpha);
        let row = vec![self.default_beta; self.beta.cols()];
        self.beta.push_row(&row);
    }

    pub fn remove_topic(&mut self, t: usize) {
        self.alpha.remove_col(t);
        self.beta.remove_row(t);
    }

    pub fn is_valid(&self) -> bool {
        self.alpha.min() > 0.0 && self.beta.min() > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum Scope {
    Word(usize),
    Document(usize),
}

/// A potential over the topic of tokens in `scope`: `on_topic` when the token's
/// topic is `topic`, `off_topic` otherwise. Values are log-scale adjustments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub scope: Scope,
    pub topic: usize,
    #[serde(with = "log_value")]
    pub on_topic: f64,
    #[serde(with = "log_value")]
    pub off_topic: f64,
}

impl Constraint {
    pub fn value(&self, z: usize) -> f64 {
        if z == self.topic {
            self.on_topic
        } else {
            self.off_topic
        }
    }
}

mod log_value {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else {
            Repr::Text(if *v < 0.0 { "-inf".into() } else { "inf".into() }).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "-inf" => Ok(f64::NEG_INFINITY),
                "inf" => Ok(f64::INFINITY),
                other => Err(serde::de::Error::custom(format!("bad potential {other:?}"))),
            },
        }
    }
}

/// Word- and document-scoped potentials; at most one entry per scope key.
/// Serialized as a list, since JSON map keys must be strings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Constraint>", into = "Vec<Constraint>")]
pub struct ConstraintSet {
    entries: BTreeMap<Scope, Constraint>,
}

impl From<Vec<Constraint>> for ConstraintSet {
    fn from(list: Vec<Constraint>) -> Self {
        let mut set = ConstraintSet::default();
        for c in list {
            set.insert(c);
        }
        set
    }
}

impl From<ConstraintSet> for Vec<Constraint> {
    fn from(set: ConstraintSet) -> Self {
        set.entries.into_values().collect()
    }
}

impl ConstraintSet {
    /// Inserts `c`, replacing any older entry with the same scope.
    pub fn insert(&mut self, c: Constraint) -> Option<Constraint> {
        self.entries.insert(c.scope, c)
    }

    pub fn get(&self, scope: Scope) -> Option<&Constraint> {
        self.entries.get(&scope)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.entries.values()
    }

    /// Sum of matching potentials for a token of `word` in `doc` with topic `z`.
    pub fn potential(&self, z: usize, word: usize, doc: usize) -> f64 {
        self.get(Scope::Word(word)).map_or(0.0, |c| c.value(z))
            + self.get(Scope::Document(doc)).map_or(0.0, |c| c.value(z))
    }

    /// Drops entries targeting `t` and shifts higher topic indices down.
    pub fn remove_topic(&mut self, t: usize) {
        self.entries.retain(|_, c| c.topic != t);
        for c in self.entries.values_mut() {
            if c.topic > t {
                c.topic -= 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementKind {
    RemoveWord,
    RemoveDocument,
    MergeTopics,
    AddWord,
    CreateTopic,
    SplitTopic,
    ChangeWordOrder,
}

impl RefinementKind {
    /// Table order used by reports.
    pub const ALL: [RefinementKind; 7] = [
        RefinementKind::RemoveWord,
        RefinementKind::RemoveDocument,
        RefinementKind::MergeTopics,
        RefinementKind::AddWord,
        RefinementKind::CreateTopic,
        RefinementKind::SplitTopic,
        RefinementKind::ChangeWordOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RefinementKind::RemoveWord => "remove_word",
            RefinementKind::RemoveDocument => "remove_document",
            RefinementKind::MergeTopics => "merge_topics",
            RefinementKind::AddWord => "add_word",
            RefinementKind::CreateTopic => "create_topic",
            RefinementKind::SplitTopic => "split_topic",
            RefinementKind::ChangeWordOrder => "change_word_order",
        }
    }

    /// Create and split start from the smaller pooled models.
    pub fn uses_small_models(self) -> bool {
        matches!(self, RefinementKind::CreateTopic | RefinementKind::SplitTopic)
    }
}

impl fmt::Display for RefinementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RefinementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RefinementKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown refinement {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RefinementOp {
    RemoveWord { topic: usize, word: usize },
    AddWord { topic: usize, word: usize },
    RemoveDocument { topic: usize, document: usize },
    MergeTopics { topic1: usize, topic2: usize },
    SplitTopic { topic: usize, seeds: Vec<usize> },
    ChangeWordOrder { topic: usize, word1: usize, word2: usize },
    CreateTopic { seeds: Vec<usize> },
}

impl RefinementOp {
    pub fn kind(&self) -> RefinementKind {
        match self {
            RefinementOp::RemoveWord { .. } => RefinementKind::RemoveWord,
            RefinementOp::AddWord { .. } => RefinementKind::AddWord,
            RefinementOp::RemoveDocument { .. } => RefinementKind::RemoveDocument,
            RefinementOp::MergeTopics { .. } => RefinementKind::MergeTopics,
            RefinementOp::SplitTopic { .. } => RefinementKind::SplitTopic,
            RefinementOp::ChangeWordOrder { .. } => RefinementKind::ChangeWordOrder,
            RefinementOp::CreateTopic { .. } => RefinementKind::CreateTopic,
        }
    }
}

/// Sorts indices by descending score; equal scores keep ascending index order.
pub fn rank_by_score(scores: &[f64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Read access to point estimates, shared by both inference backends.
pub trait TopicView {
    fn num_topics(&self) -> usize;
    fn num_docs(&self) -> usize;
    fn vocab_size(&self) -> usize;
    /// Unnormalized word scores for topic `t` (proportional to the φ estimate).
    fn word_scores(&self, t: usize) -> Vec<f64>;
    /// Normalized topic proportions of document `d` (the θ estimate).
    fn doc_topic_probs(&self, d: usize) -> Vec<f64>;
    fn priors(&self) -> &PriorSet;

    fn check_topic(&self, t: usize) -> Result<()> {
        if t < self.num_topics() {
            Ok(())
        } else {
            Err(Error::TopicOutOfRange { topic: t, topics: self.num_topics() })
        }
    }
}

pub fn rank_words(view: &impl TopicView, topic: usize) -> Result<Vec<u32>> {
    view.check_topic(topic)?;
    Ok(rank_by_score(&view.word_scores(topic)))
}

pub fn rank_documents(view: &impl TopicView, topic: usize) -> Result<Vec<u32>> {
    view.check_topic(topic)?;
    let scores: Vec<f64> = (0..view.num_docs()).map(|d| view.doc_topic_probs(d)[topic]).collect();
    Ok(rank_by_score(&scores))
}

/// Immutable point-estimate view of a model at one moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSnapshot {
    pub topic_count: usize,
    /// topics × words, rows sum to one
    pub word_probs: DenseMatrix,
    /// documents × topics
    pub doc_probs: DenseMatrix,
    pub ranked_words: Vec<Vec<u32>>,
    pub ranked_docs: Vec<Vec<u32>>,
}

impl TopicSnapshot {
    pub fn from_probs(word_probs: DenseMatrix, doc_probs: DenseMatrix) -> Self {
        let k = word_probs.rows();
        let ranked_words = (0..k).map(|t| rank_by_score(word_probs.row(t))).collect();
        let ranked_docs = (0..k)
            .map(|t| {
                let col: Vec<f64> = (0..doc_probs.rows()).map(|d| doc_probs.get(d, t)).collect();
                rank_by_score(&col)
            })
            .collect();
        TopicSnapshot {
            topic_count: k,
            word_probs,
            doc_probs,
            ranked_words,
            ranked_docs,
        }
    }

    pub fn top_words(&self, t: usize, n: usize) -> &[u32] {
        let r = &self.ranked_words[t];
        &r[..n.min(r.len())]
    }

    pub fn top_docs(&self, t: usize, n: usize) -> &[u32] {
        let r = &self.ranked_docs[t];
        &r[..n.min(r.len())]
    }

    /// 1-based rank of `word` in topic `t`.
    pub fn word_rank(&self, t: usize, word: usize) -> usize {
        self.ranked_words[t].iter().position(|&w| w as usize == word).expect("word in ranking") + 1
    }

    /// 1-based rank of `doc` in topic `t`.
    pub fn doc_rank(&self, t: usize, doc: usize) -> usize {
        self.ranked_docs[t].iter().position(|&d| d as usize == doc).expect("doc in ranking") + 1
    }
}

pub fn snapshot(view: &impl TopicView) -> TopicSnapshot {
    let k = view.num_topics();
    let mut word_probs = DenseMatrix::filled(k, view.vocab_size(), 0.0);
    for t in 0..k {
        let scores = view.word_scores(t);
        let total: f64 = scores.iter().sum();
        for (w, s) in scores.into_iter().enumerate() {
            word_probs.set(t, w, s / total);
        }
    }
    let mut doc_probs = DenseMatrix::filled(view.num_docs(), k, 0.0);
    for d in 0..view.num_docs() {
        doc_probs.row_mut(d).copy_from_slice(&view.doc_topic_probs(d));
    }
    TopicSnapshot::from_probs(word_probs, doc_probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gibbs_sweeps: usize,
    pub em_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            beta: 0.01,
            gibbs_sweeps: 500,
            em_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum ModelState {
    Gibbs(GibbsState),
    Vb(VbState),
}

impl TopicView for ModelState {
    fn num_topics(&self) -> usize {
        match self {
            ModelState::Gibbs(s) => s.num_topics(),
            ModelState::Vb(s) => s.num_topics(),
        }
    }
    fn num_docs(&self) -> usize {
        match self {
            ModelState::Gibbs(s) => s.num_docs(),
            ModelState::Vb(s) => s.num_docs(),
        }
    }
    fn vocab_size(&self) -> usize {
        match self {
            ModelState::Gibbs(s) => s.vocab_size(),
            ModelState::Vb(s) => s.vocab_size(),
        }
    }
    fn word_scores(&self, t: usize) -> Vec<f64> {
        match self {
            ModelState::Gibbs(s) => s.word_scores(t),
            ModelState::Vb(s) => s.word_scores(t),
        }
    }
    fn doc_topic_probs(&self, d: usize) -> Vec<f64> {
        match self {
            ModelState::Gibbs(s) => s.doc_topic_probs(d),
            ModelState::Vb(s) => s.doc_topic_probs(d),
        }
    }
    fn priors(&self) -> &PriorSet {
        match self {
            ModelState::Gibbs(s) => s.priors(),
            ModelState::Vb(s) => s.priors(),
        }
    }
}

/// A model bound to one of the three refinement backends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub backend: Backend,
    pub state: ModelState,
}

impl Model {
    /// Initial unsupervised training with symmetric priors.
    pub fn train(backend: Backend, corpus: &Corpus, topics: usize, seed: u64, config: &TrainConfig) -> Result<Self> {
        if topics == 0 {
            return Err(Error::InvalidArgument("topic count must be at least 1".into()));
        }
        let state = if backend.is_gibbs() {
            let mut s = GibbsState::new(corpus, topics, config.alpha, config.beta, seed);
            s.sweep(config.gibbs_sweeps)?;
            ModelState::Gibbs(s)
        } else {
            let mut s = VbState::new(corpus, topics, config.alpha, config.beta, seed);
            s.run_em(config.em_iterations)?;
            ModelState::Vb(s)
        };
        Ok(Model { backend, state })
    }

    pub fn snapshot(&self) -> TopicSnapshot {
        snapshot(&self.state)
    }

    pub fn num_topics(&self) -> usize {
        self.state.num_topics()
    }

    pub fn constraints(&self) -> Option<&ConstraintSet> {
        match &self.state {
            ModelState::Gibbs(s) => Some(s.constraints()),
            ModelState::Vb(_) => None,
        }
    }
}
