//! The seven refinements for each backend: inject knowledge into priors,
//! constraint potentials or variational parameters, forget the affected
//! assignments, then run capped inference.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::GibbsState;
use crate::model::{
    rank_words, Backend, Constraint, Model, ModelState, RefinementOp, Scope, TopicSnapshot, TopicView, EPSILON,
    HIGH_PRIOR,
};
use crate::vb::VbState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Length of the displayed word and document lists.
    pub display_n: usize,
    pub gibbs_max_sweeps: usize,
    /// Relative log-likelihood change that ends post-refinement sampling early.
    pub gibbs_tolerance: f64,
    pub em_iterations: usize,
    /// Probability that a non-seed token (or the share of non-seed mass) moves on split.
    pub split_fraction: f64,
    /// Use −∞ instead of log ε for penalizing potentials.
    pub hard_constraints: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            display_n: 20,
            gibbs_max_sweeps: 20,
            gibbs_tolerance: 1e-4,
            em_iterations: 3,
            split_fraction: 0.5,
            hard_constraints: false,
        }
    }
}

impl RefineConfig {
    fn penalty(&self) -> f64 {
        if self.hard_constraints {
            f64::NEG_INFINITY
        } else {
            EPSILON.ln()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementOutcome {
    pub pre_snapshot: TopicSnapshot,
    pub post_snapshot: TopicSnapshot,
    pub op: RefinementOp,
    pub backend: Backend,
    /// Gibbs sweeps or EM iterations run after injection.
    pub inference_steps: usize,
}

/// Validates `op`, injects it, runs capped inference and snapshots both ends.
pub fn apply_refinement(model: &mut Model, op: &RefinementOp, config: &RefineConfig) -> Result<RefinementOutcome> {
    let pre_snapshot = model.snapshot();
    validate(model, &pre_snapshot, op, config)?;
    inject(model, op, config)?;
    let inference_steps = infer(model, config)?;
    Ok(RefinementOutcome {
        pre_snapshot,
        post_snapshot: model.snapshot(),
        op: op.clone(),
        backend: model.backend,
        inference_steps,
    })
}

/// Checks ranges and refinement preconditions against the current model.
pub fn validate(model: &Model, pre: &TopicSnapshot, op: &RefinementOp, config: &RefineConfig) -> Result<()> {
    let k = model.num_topics();
    let v = model.state.vocab_size();
    let docs = model.state.num_docs();
    let topic = |t: usize| {
        if t < k {
            Ok(())
        } else {
            Err(Error::TopicOutOfRange { topic: t, topics: k })
        }
    };
    let word = |w: usize| {
        if w < v {
            Ok(())
        } else {
            Err(Error::WordOutOfRange { index: w, size: v })
        }
    };
    let seeds_ok = |seeds: &[usize]| {
        if seeds.is_empty() {
            return Err(Error::InvalidArgument("seed list is empty".into()));
        }
        seeds.iter().try_for_each(|&s| word(s))
    };
    match *op {
        RefinementOp::RemoveWord { topic: t, word: w } => {
            topic(t)?;
            word(w)?;
            if !pre.top_words(t, config.display_n).contains(&(w as u32)) {
                return Err(Error::Precondition(format!(
                    "word {w} is not among the top {} words of topic {t}",
                    config.display_n
                )));
            }
        }
        RefinementOp::AddWord { topic: t, word: w } => {
            topic(t)?;
            word(w)?;
            if pre.ranked_words[t][0] as usize == w {
                return Err(Error::Precondition(format!("word {w} is already the top word of topic {t}")));
            }
        }
        RefinementOp::RemoveDocument { topic: t, document: d } => {
            topic(t)?;
            if d >= docs {
                return Err(Error::DocumentOutOfRange { index: d, size: docs });
            }
        }
        RefinementOp::MergeTopics { topic1, topic2 } => {
            topic(topic1)?;
            topic(topic2)?;
            if topic1 == topic2 {
                return Err(Error::InvalidArgument("cannot merge a topic with itself".into()));
            }
        }
        RefinementOp::SplitTopic { topic: t, ref seeds } => {
            topic(t)?;
            seeds_ok(seeds)?;
        }
        RefinementOp::ChangeWordOrder { topic: t, word1, word2 } => {
            topic(t)?;
            word(word1)?;
            word(word2)?;
            if word1 == word2 {
                return Err(Error::InvalidArgument("reorder needs two distinct words".into()));
            }
            if pre.word_rank(t, word2) <= pre.word_rank(t, word1) {
                return Err(Error::Precondition(format!(
                    "word {word2} already ranks above word {word1} in topic {t}"
                )));
            }
        }
        RefinementOp::CreateTopic { ref seeds } => seeds_ok(seeds)?,
    }
    Ok(())
}

fn seed_set(seeds: &[usize]) -> BTreeSet<usize> {
    seeds.iter().copied().collect()
}

/// Applies the knowledge-injection part of `op` without running inference.
/// Assumes `op` has been validated.
pub fn inject(model: &mut Model, op: &RefinementOp, config: &RefineConfig) -> Result<()> {
    let backend = model.backend;
    match &mut model.state {
        ModelState::Gibbs(s) => inject_gibbs(s, backend, op, config),
        ModelState::Vb(s) => inject_vb(s, op, config),
    }
}

fn inject_gibbs(s: &mut GibbsState, backend: Backend, op: &RefinementOp, config: &RefineConfig) -> Result<()> {
    let info = backend == Backend::InfoGibbs;
    let penalty = config.penalty();
    match *op {
        RefinementOp::RemoveWord { topic: t, word: w } => {
            s.forget_word_topic(w, Some(t));
            if info {
                s.priors_mut().beta.set(t, w, EPSILON);
            } else {
                s.constraints_mut().insert(Constraint {
                    scope: Scope::Word(w),
                    topic: t,
                    on_topic: penalty,
                    off_topic: 0.0,
                });
            }
        }
        RefinementOp::AddWord { topic: t, word: w } => {
            s.forget_word_except(w, t);
            if info {
                let top = rank_words(s, t)?[0] as usize;
                let gain = s.n_wt(top, t) as f64 - s.n_wt(w, t) as f64;
                s.priors_mut().beta.add(t, w, gain.max(0.0));
            } else {
                s.constraints_mut().insert(Constraint {
                    scope: Scope::Word(w),
                    topic: t,
                    on_topic: 0.0,
                    off_topic: penalty,
                });
            }
        }
        RefinementOp::RemoveDocument { topic: t, document: d } => {
            s.forget_document(d);
            if info {
                s.priors_mut().alpha.set(d, t, EPSILON);
            } else {
                s.constraints_mut().insert(Constraint {
                    scope: Scope::Document(d),
                    topic: t,
                    on_topic: penalty,
                    off_topic: 0.0,
                });
            }
        }
        RefinementOp::MergeTopics { topic1, topic2 } => s.merge_topics(topic1, topic2),
        RefinementOp::SplitTopic { topic: t, ref seeds } => {
            let seeds = seed_set(seeds);
            let tn = s.append_topic();
            let fraction = config.split_fraction;
            s.move_tokens(t, tn, |w, rng| seeds.contains(&w) || rng.gen_bool(fraction));
            seed_new_topic(s, info, tn, &seeds, penalty);
        }
        RefinementOp::ChangeWordOrder { topic: t, word1, word2 } => {
            let (n1, n2) = (s.n_wt(word1, t) as f64, s.n_wt(word2, t) as f64);
            if info {
                s.priors_mut().beta.add(t, word2, (n1 - n2).max(0.0));
            } else {
                let outside = s.n_w_outside(word2, t) as f64;
                let r = if outside == 0.0 { f64::INFINITY } else { (n1 - n2) / outside };
                let off_topic = if r > 1.0 { penalty } else { 1.0 - r };
                s.constraints_mut().insert(Constraint {
                    scope: Scope::Word(word2),
                    topic: t,
                    on_topic: 0.0,
                    off_topic,
                });
            }
        }
        RefinementOp::CreateTopic { ref seeds } => {
            let seeds = seed_set(seeds);
            let tn = s.append_topic();
            for &w in &seeds {
                s.forget_word_topic(w, None);
            }
            seed_new_topic(s, info, tn, &seeds, penalty);
        }
    }
    Ok(())
}

fn seed_new_topic(s: &mut GibbsState, info: bool, tn: usize, seeds: &BTreeSet<usize>, penalty: f64) {
    for &w in seeds {
        if info {
            s.priors_mut().beta.set(tn, w, HIGH_PRIOR);
        } else {
            s.constraints_mut().insert(Constraint {
                scope: Scope::Word(w),
                topic: tn,
                on_topic: 0.0,
                off_topic: penalty,
            });
        }
    }
}

/// Sets β_{t,w} and moves λ_{t,w} by the same amount, preserving λ − β.
fn set_beta(s: &mut VbState, t: usize, w: usize, value: f64) {
    let old = s.priors().beta.get(t, w);
    s.priors_mut().beta.set(t, w, value);
    s.lambda_mut().add(t, w, value - old);
}

fn inject_vb(s: &mut VbState, op: &RefinementOp, config: &RefineConfig) -> Result<()> {
    let k = s.num_topics();
    match *op {
        RefinementOp::RemoveWord { topic: t, word: w } => {
            s.forget_lambda(w, t);
            set_beta(s, t, w, EPSILON);
        }
        RefinementOp::AddWord { topic: t, word: w } => {
            for other in (0..k).filter(|&o| o != t) {
                s.forget_lambda(w, other);
            }
            let top = rank_words(s, t)?[0] as usize;
            let gain = s.lambda().get(t, top) - s.lambda().get(t, w);
            let beta = s.priors().beta.get(t, w);
            set_beta(s, t, w, beta + gain.max(0.0));
        }
        RefinementOp::RemoveDocument { topic: t, document: d } => {
            s.priors_mut().alpha.set(d, t, EPSILON);
            s.forget_document(d);
        }
        RefinementOp::MergeTopics { topic1, topic2 } => {
            for w in 0..s.vocab_size() {
                let excess = s.lambda().get(topic2, w) - s.priors().beta.get(topic2, w);
                s.lambda_mut().add(topic1, w, excess);
            }
            for d in 0..s.num_docs() {
                let excess = s.gamma().get(d, topic2) - s.priors().alpha.get(d, topic2);
                s.gamma_mut().add(d, topic1, excess);
            }
            s.remove_topic(topic2);
        }
        RefinementOp::SplitTopic { topic: t, ref seeds } => {
            let seeds = seed_set(seeds);
            let tn = s.append_topic();
            let fraction = config.split_fraction;
            for w in 0..s.vocab_size() {
                let excess = s.lambda().get(t, w) - s.priors().beta.get(t, w);
                let moved = if seeds.contains(&w) { excess } else { fraction * excess };
                s.lambda_mut().add(t, w, -moved);
                s.lambda_mut().add(tn, w, moved);
            }
            for d in 0..s.num_docs() {
                let moved = fraction * (s.gamma().get(d, t) - s.priors().alpha.get(d, t));
                s.gamma_mut().add(d, t, -moved);
                s.gamma_mut().add(d, tn, moved);
            }
            for &w in &seeds {
                set_beta(s, tn, w, HIGH_PRIOR);
            }
        }
        RefinementOp::ChangeWordOrder { topic: t, word1, word2 } => {
            let gain = s.lambda().get(t, word1) - s.lambda().get(t, word2);
            let beta = s.priors().beta.get(t, word2);
            set_beta(s, t, word2, beta + gain.max(0.0));
        }
        RefinementOp::CreateTopic { ref seeds } => {
            let seeds = seed_set(seeds);
            let tn = s.append_topic();
            for &w in &seeds {
                for t in 0..tn {
                    s.forget_lambda(w, t);
                }
                set_beta(s, tn, w, HIGH_PRIOR);
            }
        }
    }
    Ok(())
}

/// Capped post-refinement inference; returns sweeps or EM iterations run.
pub fn infer(model: &mut Model, config: &RefineConfig) -> Result<usize> {
    match &mut model.state {
        ModelState::Gibbs(s) => s.run_capped(config.gibbs_max_sweeps, config.gibbs_tolerance),
        ModelState::Vb(s) => Ok(s.run_em(config.em_iterations)?.iterations),
    }
}
