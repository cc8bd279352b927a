//! Collapsed Gibbs sampling for LDA with asymmetric priors and additive
//! log-scale constraint potentials.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{ConstraintSet, PriorSet, Scope, TopicView};
use crate::special::ln_gamma;

/// Topic value of a token that has been forgotten and awaits resampling.
pub const UNASSIGNED: u32 = u32::MAX;

/// Flattened document-major token stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub words: Vec<u32>,
    /// `doc_start[d]..doc_start[d + 1]` are the tokens of document `d`.
    pub doc_start: Vec<usize>,
}

impl TokenLayout {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut words = Vec::with_capacity(corpus.num_tokens());
        let mut doc_start = Vec::with_capacity(corpus.num_docs() + 1);
        doc_start.push(0);
        for doc in &corpus.documents {
            words.extend_from_slice(&doc.tokens);
            doc_start.push(words.len());
        }
        TokenLayout { words, doc_start }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_start.len() - 1
    }

    pub fn doc_range(&self, d: usize) -> std::ops::Range<usize> {
        self.doc_start[d]..self.doc_start[d + 1]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GibbsState {
    tokens: Arc<TokenLayout>,
    vocab_size: usize,
    topics: usize,
    z: Vec<u32>,
    n_dt: Vec<u32>,
    n_wt: Vec<u32>,
    n_t: Vec<u32>,
    /// Assigned tokens per document.
    n_d: Vec<u32>,
    priors: PriorSet,
    constraints: ConstraintSet,
    #[serde(with = "rng_state")]
    rng: ChaCha8Rng,
}

/// Stores the generator as seed, stream and a split 128-bit word position so
/// that it survives formats and enum representations without u128 support.
mod rng_state {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct State {
        seed: [u8; 32],
        stream: u64,
        word_pos_hi: u64,
        word_pos_lo: u64,
    }

    pub fn serialize<S: Serializer>(rng: &ChaCha8Rng, s: S) -> Result<S::Ok, S::Error> {
        let pos = rng.get_word_pos();
        State {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ChaCha8Rng, D::Error> {
        let st = State::deserialize(d)?;
        let mut rng = ChaCha8Rng::from_seed(st.seed);
        rng.set_stream(st.stream);
        rng.set_word_pos(((st.word_pos_hi as u128) << 64) | st.word_pos_lo as u128);
        Ok(rng)
    }
}

/// Per-sweep caches: word-major β, topic β sums, and constraint multipliers.
struct SamplerTables {
    beta_wt: Vec<f64>,
    beta_sum: Vec<f64>,
    word_factor: Vec<Option<(usize, f64, f64)>>,
    doc_factor: Vec<Option<(usize, f64, f64)>>,
}

impl GibbsState {
    /// Symmetric priors and uniformly random initial assignments.
    pub fn new(corpus: &Corpus, topics: usize, alpha: f64, beta: f64, seed: u64) -> Self {
        let tokens = Arc::new(TokenLayout::from_corpus(corpus));
        let priors = PriorSet::symmetric(corpus.num_docs(), topics, corpus.vocab_size(), alpha, beta);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<Option<usize>> = (0..tokens.words.len()).map(|_| Some(rng.gen_range(0..topics))).collect();
        let mut s = Self::empty(tokens, corpus.vocab_size(), topics, priors, rng);
        s.assign_all(&z);
        s
    }

    /// Builds a state with explicit assignments (`None` = forgotten token).
    pub fn from_assignments(
        corpus: &Corpus,
        topics: usize,
        priors: PriorSet,
        z: &[Option<usize>],
        seed: u64,
    ) -> Result<Self> {
        let tokens = Arc::new(TokenLayout::from_corpus(corpus));
        if z.len() != tokens.words.len() {
            return Err(Error::InvalidArgument(format!(
                "{} assignments for {} tokens",
                z.len(),
                tokens.words.len()
            )));
        }
        if z.iter().flatten().any(|&t| t >= topics) {
            return Err(Error::InvalidArgument("assignment topic out of range".into()));
        }
        if priors.alpha.rows() != corpus.num_docs()
            || priors.alpha.cols() != topics
            || priors.beta.rows() != topics
            || priors.beta.cols() != corpus.vocab_size()
        {
            return Err(Error::InvalidArgument("prior dimensions do not match corpus".into()));
        }
        let mut s = Self::empty(tokens, corpus.vocab_size(), topics, priors, ChaCha8Rng::seed_from_u64(seed));
        s.assign_all(z);
        Ok(s)
    }

    fn empty(tokens: Arc<TokenLayout>, vocab_size: usize, topics: usize, priors: PriorSet, rng: ChaCha8Rng) -> Self {
        let docs = tokens.num_docs();
        GibbsState {
            z: vec![UNASSIGNED; tokens.words.len()],
            n_dt: vec![0; docs * topics],
            n_wt: vec![0; vocab_size * topics],
            n_t: vec![0; topics],
            n_d: vec![0; docs],
            tokens,
            vocab_size,
            topics,
            priors,
            constraints: ConstraintSet::default(),
            rng,
        }
    }

    fn assign_all(&mut self, z: &[Option<usize>]) {
        for d in 0..self.num_docs() {
            for i in self.tokens.doc_range(d) {
                if let Some(t) = z[i] {
                    self.assign(d, i, t);
                }
            }
        }
    }

    #[inline]
    fn assign(&mut self, d: usize, i: usize, t: usize) {
        let w = self.tokens.words[i] as usize;
        let k = self.topics;
        self.z[i] = t as u32;
        self.n_dt[d * k + t] += 1;
        self.n_wt[w * k + t] += 1;
        self.n_t[t] += 1;
        self.n_d[d] += 1;
    }

    #[inline]
    fn unassign(&mut self, d: usize, i: usize) {
        let t = self.z[i];
        if t == UNASSIGNED {
            return;
        }
        let t = t as usize;
        let w = self.tokens.words[i] as usize;
        let k = self.topics;
        self.z[i] = UNASSIGNED;
        self.n_dt[d * k + t] -= 1;
        self.n_wt[w * k + t] -= 1;
        self.n_t[t] -= 1;
        self.n_d[d] -= 1;
    }

    pub fn num_tokens(&self) -> usize {
        self.z.len()
    }

    pub fn assignments(&self) -> &[u32] {
        &self.z
    }

    pub fn tokens(&self) -> &TokenLayout {
        &self.tokens
    }

    pub fn n_wt(&self, w: usize, t: usize) -> u32 {
        self.n_wt[w * self.topics + t]
    }

    pub fn n_dt(&self, d: usize, t: usize) -> u32 {
        self.n_dt[d * self.topics + t]
    }

    pub fn n_t(&self, t: usize) -> u32 {
        self.n_t[t]
    }

    /// Assigned tokens of word `w` in all topics other than `t`.
    pub fn n_w_outside(&self, w: usize, t: usize) -> u32 {
        let row = &self.n_wt[w * self.topics..(w + 1) * self.topics];
        row.iter().sum::<u32>() - row[t]
    }

    pub fn unassigned_count(&self) -> usize {
        self.z.iter().filter(|&&t| t == UNASSIGNED).count()
    }

    pub fn priors_mut(&mut self) -> &mut PriorSet {
        &mut self.priors
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn constraints_mut(&mut self) -> &mut ConstraintSet {
        &mut self.constraints
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn tables(&self) -> SamplerTables {
        let k = self.topics;
        let mut beta_wt = vec![0.0; self.vocab_size * k];
        let mut beta_sum = vec![0.0; k];
        for t in 0..k {
            let row = self.priors.beta.row(t);
            for (w, &b) in row.iter().enumerate() {
                beta_wt[w * k + t] = b;
            }
            beta_sum[t] = row.iter().sum();
        }
        let mut word_factor = vec![None; self.vocab_size];
        let mut doc_factor = vec![None; self.num_docs()];
        for c in self.constraints.iter() {
            let entry = Some((c.topic, c.on_topic.exp(), c.off_topic.exp()));
            match c.scope {
                Scope::Word(w) if w < word_factor.len() => word_factor[w] = entry,
                Scope::Document(d) if d < doc_factor.len() => doc_factor[d] = entry,
                _ => {}
            }
        }
        SamplerTables {
            beta_wt,
            beta_sum,
            word_factor,
            doc_factor,
        }
    }

    /// Fills `out` with unnormalized topic scores for a token of `w` in `d`;
    /// returns their sum.
    #[inline]
    fn scores(&self, tables: &SamplerTables, d: usize, w: usize, out: &mut [f64]) -> f64 {
        let k = self.topics;
        let nd = &self.n_dt[d * k..(d + 1) * k];
        let nw = &self.n_wt[w * k..(w + 1) * k];
        let bw = &tables.beta_wt[w * k..(w + 1) * k];
        let ad = self.priors.alpha.row(d);
        for t in 0..k {
            out[t] = (nd[t] as f64 + ad[t]) * (nw[t] as f64 + bw[t]) / (self.n_t[t] as f64 + tables.beta_sum[t]);
        }
        for factor in [tables.word_factor[w], tables.doc_factor[d]].into_iter().flatten() {
            let (topic, on, off) = factor;
            for (t, s) in out.iter_mut().enumerate() {
                *s *= if t == topic { on } else { off };
            }
        }
        out.iter().sum()
    }

    /// Normalized conditional over topics for the (unassigned) token at
    /// position `i` of document `d`.
    pub fn conditional_distribution(&self, d: usize, i: usize) -> Result<Vec<f64>> {
        if d >= self.num_docs() {
            return Err(Error::DocumentOutOfRange { index: d, size: self.num_docs() });
        }
        let range = self.tokens.doc_range(d);
        if i >= range.len() {
            return Err(Error::InvalidArgument(format!("position {i} beyond document length {}", range.len())));
        }
        let idx = range.start + i;
        if self.z[idx] != UNASSIGNED {
            return Err(Error::Precondition("token must be unassigned before computing its conditional".into()));
        }
        let tables = self.tables();
        let mut p = vec![0.0; self.topics];
        let total = self.scores(&tables, d, self.tokens.words[idx] as usize, &mut p);
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numerical(format!("degenerate conditional for token {idx}")));
        }
        p.iter_mut().for_each(|x| *x /= total);
        Ok(p)
    }

    /// Runs `n` full sweeps in document order. Forgotten tokens are sampled and
    /// rejoin the tallies.
    pub fn sweep(&mut self, n: usize) -> Result<()> {
        let tables = self.tables();
        let mut p = vec![0.0; self.topics];
        let tokens = Arc::clone(&self.tokens);
        for _ in 0..n {
            for d in 0..tokens.num_docs() {
                for i in tokens.doc_range(d) {
                    self.unassign(d, i);
                    let w = tokens.words[i] as usize;
                    let total = self.scores(&tables, d, w, &mut p);
                    if !(total > 0.0) || !total.is_finite() {
                        return Err(Error::Numerical(format!("all topic scores vanished for token {i}")));
                    }
                    let u = self.rng.gen::<f64>() * total;
                    let mut acc = 0.0;
                    let mut chosen = self.topics - 1;
                    for (t, &s) in p.iter().enumerate() {
                        acc += s;
                        if u < acc {
                            chosen = t;
                            break;
                        }
                    }
                    self.assign(d, i, chosen);
                }
            }
        }
        Ok(())
    }

    /// Sweeps until the relative log-likelihood change drops below `rel_tol`,
    /// at most `max_sweeps` times. Returns the number of sweeps run.
    pub fn run_capped(&mut self, max_sweeps: usize, rel_tol: f64) -> Result<usize> {
        let mut prev = self.log_likelihood();
        for n in 1..=max_sweeps {
            self.sweep(1)?;
            let ll = self.log_likelihood();
            if ((ll - prev) / prev).abs() < rel_tol {
                return Ok(n);
            }
            prev = ll;
        }
        Ok(max_sweeps)
    }

    /// Collapsed joint log p(w, z | α, β) over assigned tokens.
    pub fn log_likelihood(&self) -> f64 {
        let k = self.topics;
        let mut ll = 0.0;
        for t in 0..k {
            let beta = self.priors.beta.row(t);
            let beta_sum: f64 = beta.iter().sum();
            ll += ln_gamma(beta_sum) - ln_gamma(self.n_t[t] as f64 + beta_sum);
            for (w, &b) in beta.iter().enumerate() {
                let n = self.n_wt[w * k + t];
                if n > 0 {
                    ll += ln_gamma(n as f64 + b) - ln_gamma(b);
                }
            }
        }
        for d in 0..self.num_docs() {
            let alpha = self.priors.alpha.row(d);
            let alpha_sum: f64 = alpha.iter().sum();
            ll += ln_gamma(alpha_sum) - ln_gamma(self.n_d[d] as f64 + alpha_sum);
            for (t, &a) in alpha.iter().enumerate() {
                let n = self.n_dt[d * k + t];
                if n > 0 {
                    ll += ln_gamma(n as f64 + a) - ln_gamma(a);
                }
            }
        }
        ll
    }

    /// Forgets every token of `w` assigned to `topic`, or to any topic if `None`.
    pub fn forget_word_topic(&mut self, w: usize, topic: Option<usize>) -> usize {
        self.forget_where(|word, z| word == w && topic.map_or(true, |t| z == t))
    }

    /// Forgets every token of `w` whose topic is not `keep`.
    pub fn forget_word_except(&mut self, w: usize, keep: usize) -> usize {
        self.forget_where(|word, z| word == w && z != keep)
    }

    fn forget_where(&mut self, pred: impl Fn(usize, usize) -> bool) -> usize {
        let tokens = Arc::clone(&self.tokens);
        let mut n = 0;
        for d in 0..tokens.num_docs() {
            for i in tokens.doc_range(d) {
                let z = self.z[i];
                if z != UNASSIGNED && pred(tokens.words[i] as usize, z as usize) {
                    self.unassign(d, i);
                    n += 1;
                }
            }
        }
        n
    }

    pub fn forget_document(&mut self, d: usize) -> usize {
        let mut n = 0;
        for i in self.tokens.doc_range(d) {
            if self.z[i] != UNASSIGNED {
                self.unassign(d, i);
                n += 1;
            }
        }
        n
    }

    /// Recounts all tallies from `z` and compares them to the stored tables.
    pub fn audit(&self) -> Result<()> {
        let k = self.topics;
        let mut n_dt = vec![0u32; self.n_dt.len()];
        let mut n_wt = vec![0u32; self.n_wt.len()];
        let mut n_t = vec![0u32; k];
        let mut n_d = vec![0u32; self.n_d.len()];
        for d in 0..self.num_docs() {
            for i in self.tokens.doc_range(d) {
                let z = self.z[i];
                if z == UNASSIGNED {
                    continue;
                }
                if z as usize >= k {
                    return Err(Error::Numerical(format!("token {i} has topic {z} >= {k}")));
                }
                let (t, w) = (z as usize, self.tokens.words[i] as usize);
                n_dt[d * k + t] += 1;
                n_wt[w * k + t] += 1;
                n_t[t] += 1;
                n_d[d] += 1;
            }
        }
        if n_dt != self.n_dt || n_wt != self.n_wt || n_t != self.n_t || n_d != self.n_d {
            return Err(Error::Numerical("count tables diverged from assignments".into()));
        }
        Ok(())
    }

    /// Moves tokens from topic `from` to `to` when `pred(word, rng)` holds.
    pub fn move_tokens(&mut self, from: usize, to: usize, mut pred: impl FnMut(usize, &mut ChaCha8Rng) -> bool) -> usize {
        let tokens = Arc::clone(&self.tokens);
        let mut moved = 0;
        for d in 0..tokens.num_docs() {
            for i in tokens.doc_range(d) {
                if self.z[i] == from as u32 && pred(tokens.words[i] as usize, &mut self.rng) {
                    self.unassign(d, i);
                    self.assign(d, i, to);
                    moved += 1;
                }
            }
        }
        moved
    }

    /// Appends an empty topic with default priors; returns its index.
    pub fn append_topic(&mut self) -> usize {
        let old = self.topics;
        let k = old + 1;
        let widen = |v: &[u32], rows: usize| {
            let mut out = Vec::with_capacity(rows * k);
            for r in 0..rows {
                out.extend_from_slice(&v[r * old..(r + 1) * old]);
                out.push(0);
            }
            out
        };
        self.n_dt = widen(&self.n_dt, self.num_docs());
        self.n_wt = widen(&self.n_wt, self.vocab_size);
        self.n_t.push(0);
        self.topics = k;
        self.priors.append_topic();
        old
    }

    /// Reassigns all tokens of `t2` to `t1` and deletes `t2`, shifting higher
    /// topic indices down by one.
    pub fn merge_topics(&mut self, t1: usize, t2: usize) {
        assert!(t1 != t2 && t1 < self.topics && t2 < self.topics);
        self.move_tokens(t2, t1, |_, _| true);
        self.remove_empty_topic(t2);
    }

    fn remove_empty_topic(&mut self, t: usize) {
        assert_eq!(self.n_t[t], 0, "topic {t} still has tokens");
        let old = self.topics;
        let narrow = |v: &[u32], rows: usize| {
            let mut out = Vec::with_capacity(rows * (old - 1));
            for r in 0..rows {
                let row = &v[r * old..(r + 1) * old];
                out.extend(row.iter().enumerate().filter(|&(c, _)| c != t).map(|(_, &x)| x));
            }
            out
        };
        self.n_dt = narrow(&self.n_dt, self.num_docs());
        self.n_wt = narrow(&self.n_wt, self.vocab_size);
        self.n_t.remove(t);
        for z in &mut self.z {
            if *z != UNASSIGNED && *z as usize > t {
                *z -= 1;
            }
        }
        self.topics = old - 1;
        self.priors.remove_topic(t);
        self.constraints.remove_topic(t);
    }
}

impl TopicView for GibbsState {
    fn num_topics(&self) -> usize {
        self.topics
    }

    fn num_docs(&self) -> usize {
        self.tokens.num_docs()
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn word_scores(&self, t: usize) -> Vec<f64> {
        let k = self.topics;
        self.priors
            .beta
            .row(t)
            .iter()
            .enumerate()
            .map(|(w, &b)| self.n_wt[w * k + t] as f64 + b)
            .collect()
    }

    fn doc_topic_probs(&self, d: usize) -> Vec<f64> {
        let k = self.topics;
        let alpha = self.priors.alpha.row(d);
        let denom = self.n_d[d] as f64 + alpha.iter().sum::<f64>();
        (0..k).map(|t| (self.n_dt[d * k + t] as f64 + alpha[t]) / denom).collect()
    }

    fn priors(&self) -> &PriorSet {
        &self.priors
    }
}
