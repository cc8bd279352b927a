use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

const STOPWORDS: &str = include_str!("stopwords.txt");

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.lines().map(str::trim).filter(|w| !w.is_empty()).collect())
}

pub fn is_stopword(word: &str) -> bool {
    stopwords().contains(word)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Words appearing in fewer documents are dropped.
    pub min_df: usize,
    /// Words appearing in more than this fraction of documents are dropped.
    pub max_df_fraction: f64,
    pub min_token_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_df: 5,
            max_df_fraction: 0.5,
            min_token_len: 3,
        }
    }
}

/// Lowercase, split on non-alphanumerics, drop short tokens and stopwords.
pub fn tokenize(text: &str, config: &PreprocessConfig) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= config.min_token_len && !is_stopword(t))
        .collect()
}
