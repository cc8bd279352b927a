//! Simulated users: a random user that draws refinement parameters uniformly,
//! and a good user that pushes mixed topics toward their dominant category.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::logreg::CategoryWordIndex;
use crate::error::{Error, Result};
use crate::model::{RefinementKind, RefinementOp, TopicSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserKind {
    Random,
    Good,
}

impl UserKind {
    pub const ALL: [UserKind; 2] = [UserKind::Random, UserKind::Good];

    pub fn name(self) -> &'static str {
        match self {
            UserKind::Random => "random",
            UserKind::Good => "good",
        }
    }
}

impl fmt::Display for UserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UserKind::ALL
            .into_iter()
            .find(|u| u.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown user kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserConfig {
    /// Length of the word and document lists a user inspects.
    pub display_n: usize,
    /// Seed words for random create and split.
    pub random_seeds: usize,
    /// Seed words for good-user create.
    pub good_seeds: usize,
    /// The good user picks one refinement target among at most this many candidates.
    pub max_candidates: usize,
    /// Words within this many positions of the top of S_c count as belonging to c.
    pub category_head: usize,
    /// Remove-word candidates are drawn from this many top words.
    pub remove_word_window: usize,
    /// 1-based rank of the anchor word for reorder; candidates lie below it within display_n.
    pub reorder_anchor: usize,
}

impl Default for UserConfig {
    fn default() -> Self {
        UserConfig {
            display_n: 20,
            random_seeds: 10,
            good_seeds: 10,
            max_candidates: 5,
            category_head: 50,
            remove_word_window: 10,
            reorder_anchor: 10,
        }
    }
}

fn choose<T: Copy>(items: &[T], rng: &mut impl Rng) -> Option<T> {
    items.choose(rng).copied()
}

fn ineligible(kind: RefinementKind, why: &str) -> Error {
    Error::Ineligible(format!("{kind}: {why}"))
}

pub fn random_refinement(
    snapshot: &TopicSnapshot,
    kind: RefinementKind,
    vocab_size: usize,
    config: &UserConfig,
    rng: &mut impl Rng,
) -> Result<RefinementOp> {
    let k = snapshot.topic_count;
    let n = config.display_n;
    let topic = rng.gen_range(0..k);
    let top = snapshot.top_words(topic, n);
    let op = match kind {
        RefinementKind::RemoveWord => RefinementOp::RemoveWord { topic, word: *top.choose(rng).expect("words") as usize },
        RefinementKind::AddWord => {
            let best = snapshot.ranked_words[topic][0] as usize;
            if vocab_size < 2 {
                return Err(ineligible(kind, "vocabulary has a single word"));
            }
            let word = loop {
                let w = rng.gen_range(0..vocab_size);
                if w != best {
                    break w;
                }
            };
            RefinementOp::AddWord { topic, word }
        }
        RefinementKind::RemoveDocument => {
            let docs = snapshot.top_docs(topic, n);
            RefinementOp::RemoveDocument { topic, document: *docs.choose(rng).expect("documents") as usize }
        }
        RefinementKind::MergeTopics => {
            if k < 2 {
                return Err(ineligible(kind, "fewer than two topics"));
            }
            let pair = index::sample(rng, k, 2);
            RefinementOp::MergeTopics { topic1: pair.index(0), topic2: pair.index(1) }
        }
        RefinementKind::ChangeWordOrder => {
            if top.len() < 2 {
                return Err(ineligible(kind, "fewer than two displayed words"));
            }
            let pair = index::sample(rng, top.len(), 2);
            let (a, b) = (pair.index(0).min(pair.index(1)), pair.index(0).max(pair.index(1)));
            RefinementOp::ChangeWordOrder { topic, word1: top[a] as usize, word2: top[b] as usize }
        }
        RefinementKind::SplitTopic => {
            let count = config.random_seeds.min(top.len());
            let mut seeds: Vec<usize> = index::sample(rng, top.len(), count).into_iter().map(|i| top[i] as usize).collect();
            seeds.sort_unstable();
            RefinementOp::SplitTopic { topic, seeds }
        }
        RefinementKind::CreateTopic => {
            let count = config.random_seeds.min(vocab_size);
            let mut seeds = index::sample(rng, vocab_size, count).into_vec();
            seeds.sort_unstable();
            RefinementOp::CreateTopic { seeds }
        }
    };
    Ok(op)
}

/// Category make-up of a topic's top documents.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicProfile {
    /// Category index → number of top documents; ordered by category index.
    pub counts: BTreeMap<usize, usize>,
}

impl TopicProfile {
    pub fn new(snapshot: &TopicSnapshot, topic: usize, labels: &[usize], n: usize) -> Self {
        let mut counts = BTreeMap::new();
        for &d in snapshot.top_docs(topic, n) {
            *counts.entry(labels[d as usize]).or_insert(0) += 1;
        }
        TopicProfile { counts }
    }

    /// Categories by descending count; ties go to the lower index (category names are sorted).
    pub fn ordered(&self) -> Vec<usize> {
        let mut cats: Vec<(usize, usize)> = self.counts.iter().map(|(&c, &n)| (c, n)).collect();
        cats.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        cats.into_iter().map(|(c, _)| c).collect()
    }

    pub fn dominant(&self) -> usize {
        self.ordered()[0]
    }

    pub fn is_mixed(&self) -> bool {
        self.counts.len() > 1
    }
}

/// Inputs the good user needs besides the model.
pub struct GoodUserContext<'a> {
    pub labels: &'a [usize],
    pub index: &'a CategoryWordIndex,
}

pub fn good_refinement(
    snapshot: &TopicSnapshot,
    kind: RefinementKind,
    ctx: &GoodUserContext<'_>,
    config: &UserConfig,
    rng: &mut impl Rng,
) -> Result<RefinementOp> {
    let n = config.display_n;
    let k = snapshot.topic_count;
    let profiles: Vec<TopicProfile> = (0..k).map(|t| TopicProfile::new(snapshot, t, ctx.labels, n)).collect();
    let mixed: Vec<usize> = (0..k).filter(|&t| profiles[t].is_mixed()).collect();
    let in_head = |c: usize, w: u32| ctx.index.position(c, w as usize) < config.category_head;

    // Each eligible topic paired with its candidate targets.
    let pick = |eligible: Vec<(usize, Vec<u32>)>, rng: &mut dyn rand::RngCore| -> Result<(usize, u32)> {
        let eligible: Vec<_> = eligible.into_iter().filter(|(_, c)| !c.is_empty()).collect();
        let (t, cands) = eligible.choose(rng).ok_or_else(|| ineligible(kind, "no eligible topic"))?;
        Ok((*t, *cands.choose(rng).expect("non-empty")))
    };

    let op = match kind {
        RefinementKind::AddWord => {
            let eligible = mixed
                .iter()
                .map(|&t| {
                    let c = profiles[t].dominant();
                    let top = snapshot.top_words(t, n);
                    let cands: Vec<u32> =
                        ctx.index.ranked[c].iter().filter(|w| !top.contains(w)).take(config.max_candidates).copied().collect();
                    (t, cands)
                })
                .collect();
            let (topic, w) = pick(eligible, rng)?;
            RefinementOp::AddWord { topic, word: w as usize }
        }
        RefinementKind::RemoveWord => {
            let eligible = mixed
                .iter()
                .map(|&t| {
                    let c = profiles[t].dominant();
                    let cands: Vec<u32> = snapshot
                        .top_words(t, config.remove_word_window)
                        .iter()
                        .filter(|&&w| !in_head(c, w))
                        .take(config.max_candidates)
                        .copied()
                        .collect();
                    (t, cands)
                })
                .collect();
            let (topic, w) = pick(eligible, rng)?;
            RefinementOp::RemoveWord { topic, word: w as usize }
        }
        RefinementKind::RemoveDocument => {
            let eligible = mixed
                .iter()
                .map(|&t| {
                    let c = profiles[t].dominant();
                    let cands: Vec<u32> = snapshot
                        .top_docs(t, n)
                        .iter()
                        .filter(|&&d| ctx.labels[d as usize] != c)
                        .take(config.max_candidates)
                        .copied()
                        .collect();
                    (t, cands)
                })
                .collect();
            let (topic, d) = pick(eligible, rng)?;
            RefinementOp::RemoveDocument { topic, document: d as usize }
        }
        RefinementKind::ChangeWordOrder => {
            let anchor = config.reorder_anchor;
            let eligible = (0..k)
                .filter(|&t| snapshot.ranked_words[t].len() > anchor)
                .map(|t| {
                    let c = profiles[t].dominant();
                    let top = snapshot.top_words(t, n);
                    let w1 = top[anchor - 1];
                    let cands: Vec<u32> = top[anchor..]
                        .iter()
                        .filter(|&&w| ctx.index.position(c, w as usize) < ctx.index.position(c, w1 as usize))
                        .copied()
                        .collect();
                    (t, cands)
                })
                .collect();
            let (topic, w2) = pick(eligible, rng)?;
            let word1 = snapshot.ranked_words[topic][anchor - 1] as usize;
            RefinementOp::ChangeWordOrder { topic, word1, word2: w2 as usize }
        }
        RefinementKind::MergeTopics => {
            let mut pairs = vec![];
            for a in 0..k {
                for b in a + 1..k {
                    if profiles[a].dominant() == profiles[b].dominant() {
                        pairs.push((a, b));
                    }
                }
            }
            let (topic1, topic2) = choose(&pairs, rng).ok_or_else(|| ineligible(kind, "no topics share a category"))?;
            RefinementOp::MergeTopics { topic1, topic2 }
        }
        RefinementKind::CreateTopic => {
            let dominant: Vec<usize> = profiles.iter().map(|p| p.dominant()).collect();
            let free: Vec<usize> = (0..ctx.index.categories.len()).filter(|c| !dominant.contains(c)).collect();
            let c = choose(&free, rng).ok_or_else(|| ineligible(kind, "every category dominates a topic"))?;
            let seeds = ctx.index.top(c, config.good_seeds).iter().map(|&w| w as usize).collect();
            RefinementOp::CreateTopic { seeds }
        }
        RefinementKind::SplitTopic => {
            let mut eligible = vec![];
            for &t in &mixed {
                let order = profiles[t].ordered();
                let (c1, c2) = (order[0], order[1]);
                let seeds: Vec<usize> = snapshot
                    .top_words(t, n)
                    .iter()
                    .filter(|&&w| ctx.index.position(c2, w as usize) < ctx.index.position(c1, w as usize))
                    .map(|&w| w as usize)
                    .collect();
                if !seeds.is_empty() {
                    eligible.push((t, seeds));
                }
            }
            let (topic, seeds) = eligible.choose(rng).cloned().ok_or_else(|| ineligible(kind, "no two-category topic"))?;
            RefinementOp::SplitTopic { topic, seeds }
        }
    };
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DenseMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two topics over 40 words and 8 documents; topic t ranks words and
    /// documents by the given orders.
    fn snapshot(words: [&[u32]; 2], docs: [&[u32]; 2]) -> TopicSnapshot {
        let (v, d) = (40, 8);
        let mut wp = DenseMatrix::filled(2, v, 0.0);
        let mut dp = DenseMatrix::filled(d, 2, 0.0);
        for t in 0..2 {
            let mut order = words[t].to_vec();
            order.extend((0..v as u32).filter(|w| !words[t].contains(w)));
            for (r, &w) in order.iter().enumerate() {
                wp.set(t, w as usize, (v - r) as f64);
            }
            let mut order = docs[t].to_vec();
            order.extend((0..d as u32).filter(|x| !docs[t].contains(x)));
            for (r, &x) in order.iter().enumerate() {
                dp.set(x as usize, t, (d - r) as f64);
            }
        }
        TopicSnapshot::from_probs(wp, dp)
    }

    /// Category 0 prefers low word ids, category 1 high ones, category 2 the middle.
    fn index() -> CategoryWordIndex {
        let w = DenseMatrix::from_rows(vec![
            (0..40).map(|i| -(i as f64)).collect(),
            (0..40).map(|i| i as f64).collect(),
            (0..40).map(|i| -((i as f64) - 20.0).abs()).collect(),
        ]);
        CategoryWordIndex::from_weights(vec!["a".into(), "b".into(), "c".into()], &w)
    }

    fn cfg() -> UserConfig {
        UserConfig { display_n: 4, category_head: 5, remove_word_window: 3, reorder_anchor: 2, ..UserConfig::default() }
    }

    #[test]
    fn random_user_is_deterministic_and_valid() {
        let s = snapshot([&[0, 1, 2, 3], &[39, 38, 37, 36]], [&[0, 1, 2, 3], &[4, 5, 6, 7]]);
        let c = cfg();
        for kind in RefinementKind::ALL {
            let a = random_refinement(&s, kind, 40, &c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let b = random_refinement(&s, kind, 40, &c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(a, b);
            match a {
                RefinementOp::RemoveWord { topic, word } => assert!(s.top_words(topic, 4).contains(&(word as u32))),
                RefinementOp::ChangeWordOrder { topic, word1, word2 } => {
                    assert!(s.word_rank(topic, word1) < s.word_rank(topic, word2));
                    assert!(s.word_rank(topic, word2) <= 4);
                }
                RefinementOp::RemoveDocument { topic, document } => {
                    assert!(s.top_docs(topic, 4).contains(&(document as u32)))
                }
                RefinementOp::MergeTopics { topic1, topic2 } => assert_ne!(topic1, topic2),
                RefinementOp::CreateTopic { seeds } => assert_eq!(seeds.len(), 10),
                RefinementOp::SplitTopic { seeds, .. } => assert_eq!(seeds.len(), 4),
                RefinementOp::AddWord { .. } => {}
            }
        }
    }

    #[test]
    fn profiles_and_dominance_ties() {
        let s = snapshot([&[0], &[1]], [&[0, 1, 4, 5], &[2, 3, 6, 7]]);
        let labels = [1, 1, 0, 0, 0, 2, 0, 1];
        let p = TopicProfile::new(&s, 0, &labels, 4);
        // docs 0,1 → cat 1; 4 → cat 0; 5 → cat 2
        assert_eq!(p.dominant(), 1);
        assert!(p.is_mixed());
        let tie = TopicProfile::new(&s, 0, &[1, 0, 9, 9, 0, 1, 9, 9], 4);
        assert_eq!(tie.dominant(), 0);
    }

    #[test]
    fn good_user_behaviors() {
        // topic 0: docs mostly category 0; topic 1: pure category 1.
        let labels = [0, 0, 0, 1, 1, 1, 1, 1];
        let s = snapshot([&[0, 30, 1, 25], &[39, 38, 37, 36]], [&[0, 1, 2, 3], &[4, 5, 6, 7]]);
        let idx = index();
        let ctx = GoodUserContext { labels: &labels, index: &idx };
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut run = |kind| good_refinement(&s, kind, &ctx, &c, &mut rng);

        // add: top S_0 words absent from topic 0's top-4 → 2, 3, 4, 5, 6
        match run(RefinementKind::AddWord).unwrap() {
            RefinementOp::AddWord { topic: 0, word } => assert!((2..=6).contains(&word)),
            op => panic!("{op:?}"),
        }
        // remove: among top-3 of topic 0, only 30 lies outside S_0's head
        assert_eq!(run(RefinementKind::RemoveWord).unwrap(), RefinementOp::RemoveWord { topic: 0, word: 30 });
        // remove document: doc 3 is the only non-category-0 document
        assert_eq!(run(RefinementKind::RemoveDocument).unwrap(), RefinementOp::RemoveDocument { topic: 0, document: 3 });
        // reorder in topic 0: anchor 30 (rank 2); 1 and 25 rank higher in S_0
        match run(RefinementKind::ChangeWordOrder).unwrap() {
            RefinementOp::ChangeWordOrder { topic: 0, word1: 30, word2 } => assert!(word2 == 1 || word2 == 25),
            RefinementOp::ChangeWordOrder { topic: 1, word1: 38, .. } => {}
            op => panic!("{op:?}"),
        }
        // merge: dominants differ
        assert!(matches!(run(RefinementKind::MergeTopics), Err(Error::Ineligible(_))));
        // create: category 2 dominates nowhere → top S_2 words around 20
        match run(RefinementKind::CreateTopic).unwrap() {
            RefinementOp::CreateTopic { seeds } => {
                assert_eq!(seeds.len(), 10);
                assert!(seeds.iter().all(|&w| (15..=25).contains(&w)));
            }
            op => panic!("{op:?}"),
        }
        // split topic 0 (categories 0 and 1): words closer to S_1 → 30, 25
        match run(RefinementKind::SplitTopic).unwrap() {
            RefinementOp::SplitTopic { topic: 0, seeds } => assert_eq!(seeds, vec![30, 25]),
            op => panic!("{op:?}"),
        }
    }

    #[test]
    fn mixed_behaviors_never_target_pure_topics() {
        let labels = [0, 0, 0, 1, 1, 1, 1, 1];
        let s = snapshot([&[0, 30, 1, 25], &[39, 38, 37, 36]], [&[0, 1, 2, 3], &[4, 5, 6, 7]]);
        let idx = index();
        let ctx = GoodUserContext { labels: &labels, index: &idx };
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for kind in [RefinementKind::AddWord, RefinementKind::RemoveWord, RefinementKind::RemoveDocument, RefinementKind::SplitTopic] {
                let op = good_refinement(&s, kind, &ctx, &cfg(), &mut rng).unwrap();
                let topic = match op {
                    RefinementOp::AddWord { topic, .. }
                    | RefinementOp::RemoveWord { topic, .. }
                    | RefinementOp::RemoveDocument { topic, .. }
                    | RefinementOp::SplitTopic { topic, .. } => topic,
                    _ => unreachable!(),
                };
                assert!(TopicProfile::new(&s, topic, &labels, 4).is_mixed());
            }
        }
    }

    #[test]
    fn user_kind_names() {
        assert_eq!("good".parse::<UserKind>().unwrap(), UserKind::Good);
        assert!("evil".parse::<UserKind>().is_err());
    }
}
