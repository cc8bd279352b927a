//! Control scores: how faithfully a model applied a refinement.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RefinementKind, RefinementOp, TopicSnapshot};
use crate::refine::RefinementOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlDetails {
    /// 1-based ranks before and after; `anchor` is w1's initial rank for reorder.
    Ranks { before: usize, after: usize, anchor: Option<usize> },
    Overlap { matched: usize, total: usize },
    Split { child: f64, parent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlScore {
    pub value: f64,
    pub refinement_type: RefinementKind,
    pub details: ControlDetails,
}

/// add_word: (r1 − r2)/(r1 − 1), 1.0 when r1 = 1.
pub fn add_word_control(r1: usize, r2: usize) -> f64 {
    if r1 == 1 {
        1.0
    } else {
        (r1 as f64 - r2 as f64) / (r1 as f64 - 1.0)
    }
}

/// remove_word / remove_document: min(1, (r2 − r1)/((n + 1) − r1)), 1.0 when r1 > n.
pub fn remove_control(r1: usize, r2: usize, display_n: usize) -> f64 {
    if r1 > display_n {
        1.0
    } else {
        ((r2 as f64 - r1 as f64) / ((display_n + 1) as f64 - r1 as f64)).min(1.0)
    }
}

/// change_word_order: (r_w2 − r_w2')/(r_w2 − r_w1).
pub fn reorder_control(r_w1: usize, r_w2: usize, r_w2_after: usize) -> Result<f64> {
    if r_w1 == r_w2 {
        return Err(Error::InvalidArgument("reorder control undefined for equal initial ranks".into()));
    }
    Ok((r_w2 as f64 - r_w2_after as f64) / (r_w2 as f64 - r_w1 as f64))
}

fn overlap(items: &[u32], reference: &BTreeSet<u32>) -> usize {
    items.iter().filter(|i| reference.contains(i)).count()
}

/// |seeds ∩ top_n(created)| / |seeds|.
pub fn create_control(seeds: &[usize], created_top: &[u32]) -> ControlScore {
    let seeds: BTreeSet<u32> = seeds.iter().map(|&s| s as u32).collect();
    let matched = overlap(created_top, &seeds);
    ControlScore {
        value: matched as f64 / seeds.len() as f64,
        refinement_type: RefinementKind::CreateTopic,
        details: ControlDetails::Overlap { matched, total: seeds.len() },
    }
}

/// |top_n(merged) ∩ (top_n(t1) ∪ top_n(t2))| / n.
pub fn merge_control(t1_top: &[u32], t2_top: &[u32], merged_top: &[u32], display_n: usize) -> ControlScore {
    let parents: BTreeSet<u32> = t1_top.iter().chain(t2_top).copied().collect();
    let matched = overlap(merged_top, &parents);
    ControlScore {
        value: matched as f64 / display_n as f64,
        refinement_type: RefinementKind::MergeTopics,
        details: ControlDetails::Overlap { matched, total: display_n },
    }
}

/// Mean of the child score (seeds kept in the child) and the parent score
/// (non-seed pre-split words kept in the parent).
pub fn split_control(pre_top: &[u32], seeds: &[usize], parent_top: &[u32], child_top: &[u32]) -> ControlScore {
    let seeds: BTreeSet<u32> = seeds.iter().map(|&s| s as u32).collect();
    let child = overlap(child_top, &seeds) as f64 / seeds.len() as f64;
    let rest: BTreeSet<u32> = pre_top.iter().filter(|w| !seeds.contains(w)).copied().collect();
    let parent = if rest.is_empty() { 1.0 } else { overlap(parent_top, &rest) as f64 / rest.len() as f64 };
    ControlScore {
        value: (child + parent) / 2.0,
        refinement_type: RefinementKind::SplitTopic,
        details: ControlDetails::Split { child, parent },
    }
}

/// Index of topic `t` after topic `removed` is deleted.
pub fn shifted_topic(t: usize, removed: usize) -> usize {
    t - usize::from(t > removed)
}

/// Control score of `op` given the snapshots around it.
pub fn control_score(pre: &TopicSnapshot, post: &TopicSnapshot, op: &RefinementOp, display_n: usize) -> Result<ControlScore> {
    let ranks = |before, after, anchor| ControlDetails::Ranks { before, after, anchor };
    let score = match *op {
        RefinementOp::AddWord { topic, word } => {
            let (r1, r2) = (pre.word_rank(topic, word), post.word_rank(topic, word));
            ControlScore { value: add_word_control(r1, r2), refinement_type: op.kind(), details: ranks(r1, r2, None) }
        }
        RefinementOp::RemoveWord { topic, word } => {
            let (r1, r2) = (pre.word_rank(topic, word), post.word_rank(topic, word));
            ControlScore {
                value: remove_control(r1, r2, display_n),
                refinement_type: op.kind(),
                details: ranks(r1, r2, None),
            }
        }
        RefinementOp::RemoveDocument { topic, document } => {
            let (r1, r2) = (pre.doc_rank(topic, document), post.doc_rank(topic, document));
            ControlScore {
                value: remove_control(r1, r2, display_n),
                refinement_type: op.kind(),
                details: ranks(r1, r2, None),
            }
        }
        RefinementOp::ChangeWordOrder { topic, word1, word2 } => {
            let (a, r1, r2) = (pre.word_rank(topic, word1), pre.word_rank(topic, word2), post.word_rank(topic, word2));
            ControlScore { value: reorder_control(a, r1, r2)?, refinement_type: op.kind(), details: ranks(r1, r2, Some(a)) }
        }
        RefinementOp::CreateTopic { ref seeds } => create_control(seeds, post.top_words(pre.topic_count, display_n)),
        RefinementOp::MergeTopics { topic1, topic2 } => merge_control(
            pre.top_words(topic1, display_n),
            pre.top_words(topic2, display_n),
            post.top_words(shifted_topic(topic1, topic2), display_n),
            display_n,
        ),
        RefinementOp::SplitTopic { topic, ref seeds } => split_control(
            pre.top_words(topic, display_n),
            seeds,
            post.top_words(topic, display_n),
            post.top_words(pre.topic_count, display_n),
        ),
    };
    Ok(score)
}

pub fn outcome_control(outcome: &RefinementOutcome, display_n: usize) -> Result<ControlScore> {
    control_score(&outcome.pre_snapshot, &outcome.post_snapshot, &outcome.op, display_n)
}
