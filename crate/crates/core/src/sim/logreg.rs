//! Multinomial logistic regression over length-normalized bags of words,
//! used only to order words by how strongly they indicate each category.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::model::rank_by_score;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig { l2: 0.01, learning_rate: 0.5, epochs: 200 }
    }
}

/// Trained weights (classes × words), biases and the loss after each epoch
/// (index 0 is the loss at initialization).
#[derive(Debug, Clone)]
pub struct LogRegFit {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
    pub loss_trace: Vec<f64>,
}

struct Features {
    /// Sparse rows: (word, count / length).
    rows: Vec<Vec<(usize, f64)>>,
    labels: Vec<usize>,
}

impl Features {
    fn new(corpus: &Corpus) -> Self {
        let rows = corpus
            .documents
            .iter()
            .map(|doc| {
                let mut counts = std::collections::BTreeMap::new();
                for &w in &doc.tokens {
                    *counts.entry(w as usize).or_insert(0.0) += 1.0;
                }
                let len = doc.tokens.len() as f64;
                counts.into_iter().map(|(w, c)| (w, c / len)).collect()
            })
            .collect();
        Features { rows, labels: corpus.labels() }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in z.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    z.iter_mut().for_each(|x| *x /= s);
}

fn logits(w: &DenseMatrix, b: &[f64], row: &[(usize, f64)], out: &mut [f64]) {
    for (c, o) in out.iter_mut().enumerate() {
        let wr = w.row(c);
        *o = b[c] + row.iter().map(|&(j, x)| wr[j] * x).sum::<f64>();
    }
}

/// Mean cross-entropy plus (λ/2)‖W‖².
fn loss(f: &Features, w: &DenseMatrix, b: &[f64], l2: f64) -> f64 {
    let classes = b.len();
    let mut z = vec![0.0; classes];
    let mut total = 0.0;
    for (row, &y) in f.rows.iter().zip(&f.labels) {
        logits(w, b, row, &mut z);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / f.rows.len() as f64 + 0.5 * l2 * w.as_slice().iter().map(|x| x * x).sum::<f64>()
}

fn gradient(f: &Features, w: &DenseMatrix, b: &[f64], l2: f64) -> (DenseMatrix, Vec<f64>) {
    let classes = b.len();
    let n = f.rows.len() as f64;
    let mut gw = DenseMatrix::filled(w.rows(), w.cols(), 0.0);
    let mut gb = vec![0.0; classes];
    let mut z = vec![0.0; classes];
    for (row, &y) in f.rows.iter().zip(&f.labels) {
        logits(w, b, row, &mut z);
        softmax_in_place(&mut z);
        z[y] -= 1.0;
        for c in 0..classes {
            let r = z[c] / n;
            gb[c] += r;
            for &(j, x) in row {
                gw.add(c, j, r * x);
            }
        }
    }
    for (g, x) in gw.as_mut_slice().iter_mut().zip(w.as_slice()) {
        *g += l2 * x;
    }
    (gw, gb)
}

/// Full-batch gradient descent from zero weights. A step that would raise
/// the loss is halved until it does not.
pub fn fit(corpus: &Corpus, config: &LogRegConfig) -> Result<LogRegFit> {
    for (cat, size) in corpus.category_sizes() {
        if size < 2 {
            return Err(Error::InvalidArgument(format!("category {cat:?} has fewer than 2 documents")));
        }
    }
    let f = Features::new(corpus);
    let classes = corpus.categories.len();
    let mut w = DenseMatrix::filled(classes, corpus.vocab_size(), 0.0);
    let mut b = vec![0.0; classes];
    let mut current = loss(&f, &w, &b, config.l2);
    let mut trace = vec![current];
    for _ in 0..config.epochs {
        let (gw, gb) = gradient(&f, &w, &b, config.l2);
        let mut step = config.learning_rate;
        loop {
            let mut w2 = w.clone();
            for (x, g) in w2.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *x -= step * g;
            }
            let b2: Vec<f64> = b.iter().zip(&gb).map(|(x, g)| x - step * g).collect();
            let next = loss(&f, &w2, &b2, config.l2);
            if next <= current {
                w = w2;
                b = b2;
                current = next;
                break;
            }
            step /= 2.0;
            if step < 1e-12 {
                break;
            }
        }
        trace.push(current);
    }
    Ok(LogRegFit { weights: w, bias: b, loss_trace: trace })
}

/// Per category, the full vocabulary ordered by descending class weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryWordIndex {
    pub categories: Vec<String>,
    pub ranked: Vec<Vec<u32>>,
    /// `positions[c][w]` is the 0-based position of `w` in `ranked[c]`.
    pub positions: Vec<Vec<u32>>,
}

impl CategoryWordIndex {
    pub fn from_weights(categories: Vec<String>, weights: &DenseMatrix) -> Self {
        let ranked: Vec<Vec<u32>> = (0..weights.rows()).map(|c| rank_by_score(weights.row(c))).collect();
        let positions = ranked
            .iter()
            .map(|r| {
                let mut pos = vec![0u32; r.len()];
                for (i, &w) in r.iter().enumerate() {
                    pos[w as usize] = i as u32;
                }
                pos
            })
            .collect();
        CategoryWordIndex { categories, ranked, positions }
    }

    pub fn position(&self, category: usize, word: usize) -> usize {
        self.positions[category][word] as usize
    }

    pub fn top(&self, category: usize, n: usize) -> &[u32] {
        &self.ranked[category][..n.min(self.ranked[category].len())]
    }
}

pub fn representative_words(corpus: &Corpus, config: &LogRegConfig) -> Result<CategoryWordIndex> {
    let fit = fit(corpus, config)?;
    Ok(CategoryWordIndex::from_weights(corpus.categories.clone(), &fit.weights))
}
