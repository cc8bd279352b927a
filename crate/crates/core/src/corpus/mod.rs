//! Labeled document collections and their vocabularies.

mod guardian;
mod preprocess;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use guardian::{GuardianClient, GuardianConfig, HttpResponse, Transport};
pub use preprocess::{is_stopword, tokenize, PreprocessConfig};
pub use synthetic::{generate_synthetic, SyntheticConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<u32>,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).map(|&i| i as usize)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        // Deserialized vocabularies were unique when written; a later duplicate shadows.
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Vocabulary { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocabulary: Vocabulary,
    pub categories: Vec<String>,
}

/// One line of the JSONL corpus format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
    pub category: String,
}

impl Corpus {
    /// Builds a corpus, validating ids, categories, and token ranges.
    pub fn new(documents: Vec<Document>, vocabulary: Vocabulary) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        let mut categories = BTreeSet::new();
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateDocument(doc.id.clone()));
            }
            if doc.tokens.is_empty() {
                return Err(Error::InvalidArgument(format!("document {:?} has no tokens", doc.id)));
            }
            if let Some(&bad) = doc.tokens.iter().find(|&&t| t as usize >= vocabulary.len()) {
                return Err(Error::WordOutOfRange {
                    index: bad as usize,
                    size: vocabulary.len(),
                });
            }
            categories.insert(doc.category.clone());
        }
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Corpus {
            documents,
            vocabulary,
            categories: categories.into_iter().collect(),
        })
    }

    pub fn num_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }

    /// Category index (into `categories`) of every document.
    pub fn labels(&self) -> Vec<usize> {
        let lookup: HashMap<&str, usize> = self
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        self.documents.iter().map(|d| lookup[d.category.as_str()]).collect()
    }

    /// Number of documents each word appears in.
    pub fn document_frequencies(&self) -> Vec<usize> {
        let mut df = vec![0; self.vocab_size()];
        let mut mark = vec![usize::MAX; self.vocab_size()];
        for (d, doc) in self.documents.iter().enumerate() {
            for &w in &doc.tokens {
                let w = w as usize;
                if mark[w] != d {
                    mark[w] = d;
                    df[w] += 1;
                }
            }
        }
        df
    }

    pub fn word_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocab_size()];
        for doc in &self.documents {
            for &w in &doc.tokens {
                counts[w as usize] += 1;
            }
        }
        counts
    }

    pub fn from_records(records: Vec<RawRecord>, config: &PreprocessConfig) -> Result<Self> {
        let tokenized: Vec<Vec<String>> = records.iter().map(|r| tokenize(&r.text, config)).collect();
        let n_docs = records.len();

        let mut df: HashMap<&str, usize> = HashMap::new();
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for toks in &tokenized {
            let mut seen = HashSet::new();
            for t in toks {
                *freq.entry(t.as_str()).or_default() += 1;
                if seen.insert(t.as_str()) {
                    *df.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        let max_df = config.max_df_fraction * n_docs as f64;
        let mut kept: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|(w, _)| {
                let d = df[w];
                d >= config.min_df && d as f64 <= max_df
            })
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let vocabulary = Vocabulary::new(kept.iter().map(|(w, _)| w.to_string()).collect())?;

        let documents: Vec<Document> = records
            .into_iter()
            .zip(tokenized)
            .filter_map(|(r, toks)| {
                let tokens: Vec<u32> = toks
                    .iter()
                    .filter_map(|t| vocabulary.id(t).map(|i| i as u32))
                    .collect();
                (!tokens.is_empty()).then(|| Document {
                    id: r.id,
                    tokens,
                    category: r.category,
                    raw_text: Some(r.text),
                })
            })
            .collect();
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Corpus::new(documents, vocabulary)
    }

    /// Document count per category.
    pub fn category_sizes(&self) -> BTreeMap<&str, usize> {
        let mut sizes = BTreeMap::new();
        for d in &self.documents {
            *sizes.entry(d.category.as_str()).or_default() += 1;
        }
        sizes
    }
}

/// Parses JSONL records, reporting the 1-based line number of the first bad line.
pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn ingest_jsonl(path: impl AsRef<Path>, config: &PreprocessConfig) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let records = parse_jsonl(BufReader::new(file))?;
    Corpus::from_records(records, config)
}
