//! NPMI topic coherence against document co-occurrence reference statistics.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::model::TopicSnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NpmiConfig {
    pub top_n: usize,
    /// Pseudo-count added to joint document counts; 0 disables smoothing.
    pub smoothing: f64,
}

impl Default for NpmiConfig {
    fn default() -> Self {
        NpmiConfig { top_n: 20, smoothing: 1.0 }
    }
}

#[derive(Debug, Clone)]
enum CoCounts {
    /// Sorted document ids per word.
    Postings(Vec<Vec<u32>>),
    /// Keyed by (lower id, higher id).
    Sparse(HashMap<(u32, u32), u64>),
}

/// Document frequencies and co-document frequencies of a reference corpus.
#[derive(Debug, Clone)]
pub struct ReferenceStats {
    vocabulary: Vocabulary,
    total_docs: u64,
    doc_counts: Vec<u64>,
    co: CoCounts,
}

/// On-disk form: vocabulary, per-word document counts, sparse pair counts
/// `[i, j, count]` with `i < j`, and the number of documents.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReferenceFile {
    pub vocabulary: Vec<String>,
    pub doc_counts: Vec<u64>,
    pub pairs: Vec<(u32, u32, u64)>,
    pub total_docs: u64,
}

impl ReferenceStats {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut postings = vec![Vec::new(); corpus.vocab_size()];
        for (d, doc) in corpus.documents.iter().enumerate() {
            for &w in &doc.tokens {
                let list: &mut Vec<u32> = &mut postings[w as usize];
                if list.last() != Some(&(d as u32)) {
                    list.push(d as u32);
                }
            }
        }
        ReferenceStats {
            vocabulary: corpus.vocabulary.clone(),
            total_docs: corpus.num_docs() as u64,
            doc_counts: postings.iter().map(|p| p.len() as u64).collect(),
            co: CoCounts::Postings(postings),
        }
    }

    pub fn from_file_data(file: ReferenceFile) -> Result<Self> {
        if file.doc_counts.len() != file.vocabulary.len() {
            return Err(Error::InvalidArgument("doc_counts length differs from vocabulary".into()));
        }
        let v = file.vocabulary.len() as u32;
        let mut pairs = HashMap::with_capacity(file.pairs.len());
        for (i, j, c) in file.pairs {
            if i >= v || j >= v || i == j {
                return Err(Error::InvalidArgument(format!("invalid pair ({i}, {j})")));
            }
            pairs.insert((i.min(j), i.max(j)), c);
        }
        Ok(ReferenceStats {
            vocabulary: Vocabulary::new(file.vocabulary)?,
            total_docs: file.total_docs,
            doc_counts: file.doc_counts,
            co: CoCounts::Sparse(pairs),
        })
    }

    pub fn to_file_data(&self) -> ReferenceFile {
        let pairs = match &self.co {
            CoCounts::Sparse(map) => {
                let sorted: BTreeMap<_, _> = map.iter().map(|(&k, &c)| (k, c)).collect();
                sorted.into_iter().map(|((i, j), c)| (i, j, c)).collect()
            }
            CoCounts::Postings(postings) => {
                let mut docs: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
                for (w, list) in postings.iter().enumerate() {
                    for &d in list {
                        docs.entry(d).or_default().push(w as u32);
                    }
                }
                let mut counts: BTreeMap<(u32, u32), u64> = BTreeMap::new();
                for words in docs.values() {
                    for (a, &i) in words.iter().enumerate() {
                        for &j in &words[a + 1..] {
                            *counts.entry((i, j)).or_insert(0) += 1;
                        }
                    }
                }
                counts.into_iter().map(|((i, j), c)| (i, j, c)).collect()
            }
        };
        ReferenceFile {
            vocabulary: self.vocabulary.words().to_vec(),
            doc_counts: self.doc_counts.clone(),
            pairs,
            total_docs: self.total_docs,
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let data: ReferenceFile = serde_json::from_reader(BufReader::new(f))?;
        Self::from_file_data(data)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), &self.to_file_data())?;
        Ok(())
    }

    pub fn total_docs(&self) -> u64 {
        self.total_docs
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.vocabulary.id(word)
    }

    pub fn doc_count(&self, w: usize) -> u64 {
        self.doc_counts[w]
    }

    pub fn co_doc_count(&self, a: usize, b: usize) -> u64 {
        if a == b {
            return self.doc_counts[a];
        }
        match &self.co {
            CoCounts::Postings(p) => intersection_size(&p[a], &p[b]),
            CoCounts::Sparse(map) => {
                let key = (a.min(b) as u32, a.max(b) as u32);
                map.get(&key).copied().unwrap_or(0)
            }
        }
    }

    /// NPMI of two reference words; `None` marks a word missing from the
    /// reference vocabulary (frequency 0).
    pub fn npmi(&self, a: Option<usize>, b: Option<usize>, smoothing: f64) -> f64 {
        let n = self.total_docs as f64;
        let (da, db) = (a.map_or(0, |w| self.doc_count(w)), b.map_or(0, |w| self.doc_count(w)));
        let joint = match (a, b) {
            (Some(a), Some(b)) => self.co_doc_count(a, b),
            _ => 0,
        };
        npmi_from_counts(da as f64, db as f64, joint as f64, n, smoothing)
    }
}

fn intersection_size(a: &[u32], b: &[u32]) -> u64 {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// NPMI from document counts, clamped to [−1, 1]. A word that never occurs
/// has no evidence of association and scores −1; so does an unsmoothed zero
/// joint count. Words present in every document score 1.
pub fn npmi_from_counts(df_a: f64, df_b: f64, joint: f64, total: f64, smoothing: f64) -> f64 {
    if df_a == 0.0 || df_b == 0.0 || total == 0.0 {
        return -1.0;
    }
    let p_joint = (joint + smoothing) / total;
    if p_joint <= 0.0 {
        return -1.0;
    }
    let pmi = (p_joint / ((df_a / total) * (df_b / total))).ln();
    let denom = -p_joint.ln();
    if denom <= 0.0 {
        return 1.0;
    }
    (pmi / denom).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub per_topic: Vec<f64>,
    pub model_mean: f64,
}

/// Mean NPMI over all pairs of each topic's top words, then over topics.
pub fn npmi_coherence(
    snapshot: &TopicSnapshot,
    vocabulary: &Vocabulary,
    reference: &ReferenceStats,
    config: &NpmiConfig,
) -> CoherenceReport {
    let per_topic: Vec<f64> = (0..snapshot.topic_count)
        .map(|t| {
            let ids: Vec<Option<usize>> = snapshot
                .top_words(t, config.top_n)
                .iter()
                .map(|&w| reference.word_id(vocabulary.word(w as usize)))
                .collect();
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    sum += reference.npmi(ids[i], ids[j], config.smoothing);
                    pairs += 1;
                }
            }
            if pairs == 0 {
                0.0
            } else {
                sum / pairs as f64
            }
        })
        .collect();
    let model_mean = if per_topic.is_empty() { 0.0 } else { per_topic.iter().sum::<f64>() / per_topic.len() as f64 };
    CoherenceReport { per_topic, model_mean }
}

/// Model-level coherence change between two snapshots.
pub fn coherence_delta(
    pre: &TopicSnapshot,
    post: &TopicSnapshot,
    vocabulary: &Vocabulary,
    reference: &ReferenceStats,
    config: &NpmiConfig,
) -> f64 {
    npmi_coherence(post, vocabulary, reference, config).model_mean
        - npmi_coherence(pre, vocabulary, reference, config).model_mean
}
