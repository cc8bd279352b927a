use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Document, Vocabulary};
use crate::error::{Error, Result};

/// Labeled corpus generator: each category owns a disjoint block of signature
/// words, borrows from the block of one partner category, and shares one
/// background block with every category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_categories: usize,
    pub docs_per_category: usize,
    pub vocab_size: usize,
    pub doc_length: usize,
    pub seed: u64,
    /// Probability that a token is drawn from its category's signature block.
    pub signature_weight: f64,
    /// Probability that a token is drawn from the partner category's block.
    pub partner_weight: f64,
    /// Fraction of the vocabulary split evenly into signature blocks.
    pub signature_fraction: f64,
    /// Zipf exponent of word frequencies inside each block.
    pub zipf_exponent: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_categories: 14,
            docs_per_category: 100,
            vocab_size: 2000,
            doc_length: 150,
            seed: 1,
            signature_weight: 0.6,
            partner_weight: 0.15,
            signature_fraction: 0.5,
            zipf_exponent: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn block_size(&self) -> usize {
        ((self.vocab_size as f64 * self.signature_fraction) as usize / self.n_categories.max(1)).max(1)
    }

    /// Word-index range of category `c`'s signature block.
    pub fn signature_block(&self, c: usize) -> std::ops::Range<usize> {
        let b = self.block_size();
        c * b..(c + 1) * b
    }

    /// Categories are paired 0–1, 2–3, …; an odd last category pairs with its predecessor.
    pub fn partner(&self, c: usize) -> usize {
        let p = c ^ 1;
        if p < self.n_categories {
            p
        } else {
            c.saturating_sub(1)
        }
    }

    pub fn background_block(&self) -> std::ops::Range<usize> {
        self.n_categories * self.block_size()..self.vocab_size
    }

    fn validate(&self) -> Result<()> {
        if self.n_categories == 0 || self.docs_per_category == 0 || self.vocab_size == 0 || self.doc_length == 0 {
            return Err(Error::InvalidArgument("synthetic corpus counts must be at least 1".into()));
        }
        if self.vocab_size < 10 * self.n_categories {
            return Err(Error::InvalidArgument(format!(
                "vocab_size {} must be at least 10 x n_categories ({})",
                self.vocab_size,
                10 * self.n_categories
            )));
        }
        if self.signature_weight < 0.0 || self.partner_weight < 0.0 || self.signature_weight + self.partner_weight > 1.0 || !(0.0 < self.signature_fraction && self.signature_fraction < 1.0) {
            return Err(Error::InvalidArgument("mixture weights must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Corpus> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let zipf = |n: usize| {
            WeightedIndex::new((1..=n).map(|r| (r as f64).powf(-self.zipf_exponent))).expect("non-empty block")
        };
        let block = self.block_size();
        let signature = zipf(block);
        let background_range = self.background_block();
        let background = zipf(background_range.len());

        let mut words = Vec::with_capacity(self.vocab_size);
        for c in 0..self.n_categories {
            words.extend((0..block).map(|i| format!("c{c:02}w{i:03}")));
        }
        words.extend((0..background_range.len()).map(|i| format!("bg{i:04}")));
        let vocabulary = Vocabulary::new(words)?;

        let mut documents = Vec::with_capacity(self.n_categories * self.docs_per_category);
        for c in 0..self.n_categories {
            let category = format!("cat{c:02}");
            let partner = self.partner(c);
            for i in 0..self.docs_per_category {
                let tokens = (0..self.doc_length)
                    .map(|_| {
                        let u = rng.gen::<f64>();
                        if u < self.signature_weight {
                            (c * block + signature.sample(&mut rng)) as u32
                        } else if u < self.signature_weight + self.partner_weight {
                            (partner * block + signature.sample(&mut rng)) as u32
                        } else {
                            (background_range.start + background.sample(&mut rng)) as u32
                        }
                    })
                    .collect();
                documents.push(Document {
                    id: format!("{category}-{i:04}"),
                    tokens,
                    category: category.clone(),
                    raw_text: None,
                });
            }
        }
        Corpus::new(documents, vocabulary)
    }
}

pub fn generate_synthetic(
    n_categories: usize,
    docs_per_category: usize,
    vocab_size: usize,
    doc_length: usize,
    seed: u64,
) -> Result<Corpus> {
    SyntheticConfig {
        n_categories,
        docs_per_category,
        vocab_size,
        doc_length,
        seed,
        ..SyntheticConfig::default()
    }
    .generate()
}
