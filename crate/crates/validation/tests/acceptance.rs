//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exact checks compare the library against oracles written independently in
//! this file. Directional checks read the records of a desk-scale simulation
//! (3 backends x 7 refinements x 2 users x 25 runs on a seed-pinned 14 x 100
//! synthetic corpus) driven exactly as `hltm simulate --config
//! configs/desk.toml` drives it. The simulation runs twice, from pool training
//! to `records.csv`, to check determinism.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hltm_core::corpus::{Corpus, Document, SyntheticConfig, Vocabulary};
use hltm_core::gibbs::GibbsState;
use hltm_core::metrics::ReferenceStats;
use hltm_core::model::{
    Backend, Constraint, Model, ModelState, PriorSet, RefinementKind, RefinementOp, Scope, TopicView, TrainConfig,
    EPSILON,
};
use hltm_core::refine::{apply_refinement, RefineConfig};
use hltm_core::sim::experiment::{read_records, run_experiment, write_outputs, ExperimentConfig, Workbench};
use hltm_core::sim::kruskal_wallis;
use hltm_core::sim::pool::mix_seed;
use hltm_core::sim::{summarize, CellSummary, ExperimentRecord, UserKind};
use hltm_core::vb::{VbConfig, VbState};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn corpus_of(docs: &[Vec<u32>], vocab: usize) -> Corpus {
    let vocabulary = Vocabulary::new((0..vocab).map(|i| format!("w{i:03}")).collect()).unwrap();
    let documents = docs
        .iter()
        .enumerate()
        .map(|(i, tokens)| Document { id: format!("d{i}"), tokens: tokens.clone(), category: "c".into(), raw_text: None })
        .collect();
    Corpus::new(documents, vocabulary).unwrap()
}

fn gibbs_conditional() -> Outcome {
    // doc0 = [w0 (held out), w1, w1, w2] gives n_d = [2, 1]; doc1 fills the
    // topic totals to n = [10, 5] with n_w0 = [3, 0].
    let corpus = corpus_of(&[vec![0, 1, 1, 2], vec![0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2]], 3);
    let mut z = vec![None, Some(0), Some(0), Some(1)];
    z.extend([0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1].map(Some));
    let priors = PriorSet::symmetric(2, 2, 3, 0.1, 0.01);
    let mut s = GibbsState::from_assignments(&corpus, 2, priors, &z, 0).map_err(|e| e.to_string())?;

    let s0 = (2.0 + 0.1) * (3.0 + 0.01) / (10.0 + 3.0 * 0.01);
    let s1 = (1.0 + 0.1) * (0.0 + 0.01) / (5.0 + 3.0 * 0.01);
    let p = s.conditional_distribution(0, 0).map_err(|e| e.to_string())?;
    let oracle = [s0 / (s0 + s1), s1 / (s0 + s1)];
    for t in 0..2 {
        ensure((p[t] - oracle[t]).abs() < 1e-9, || format!("p[{t}] = {} vs oracle {}", p[t], oracle[t]))?;
    }
    ensure((p[0] - 0.99654).abs() < 5e-6 && (p[1] - 0.00346).abs() < 5e-6, || format!("p = {p:?}"))?;

    s.constraints_mut().insert(Constraint { scope: Scope::Word(0), topic: 0, on_topic: EPSILON.ln(), off_topic: 0.0 });
    let pc = s.conditional_distribution(0, 0).map_err(|e| e.to_string())?[0];
    let expected = s0 * 1e-8 / (s0 * 1e-8 + s1);
    ensure(((pc - expected) / expected).abs() < 1e-9, || format!("constrained p0 = {pc:e} vs {expected:e}"))?;
    ensure((pc - 2.88e-6).abs() < 0.005e-6, || format!("constrained p0 = {pc:e}"))?;
    Ok(format!("p = [{:.5}, {:.5}], constrained p0 = {pc:.3e}", p[0], p[1]))
}

fn rising(a: f64, n: usize) -> f64 {
    (0..n).map(|i| a + i as f64).product()
}

fn sampler_vs_enumeration() -> Outcome {
    let docs = vec![vec![0u32, 1, 0], vec![2u32, 1, 2]];
    let (k, v, alpha, beta) = (2usize, 3usize, 0.5, 0.5);
    let corpus = corpus_of(&docs, v);
    let flat: Vec<(usize, usize)> = docs.iter().enumerate().flat_map(|(d, ws)| ws.iter().map(move |&w| (d, w as usize))).collect();
    let n = flat.len();

    // Exact posterior over all K^n joint assignments from the collapsed joint
    // p(w, z) written with rising factorials.
    let states = k.pow(n as u32);
    let mut exact = vec![0.0; states];
    for (code, slot) in exact.iter_mut().enumerate() {
        let z: Vec<usize> = (0..n).map(|i| (code >> i) & 1).collect();
        let mut ndt = vec![[0usize; 2]; docs.len()];
        let mut nwt = vec![[0usize; 2]; v];
        let mut nt = [0usize; 2];
        for (i, &(d, w)) in flat.iter().enumerate() {
            ndt[d][z[i]] += 1;
            nwt[w][z[i]] += 1;
            nt[z[i]] += 1;
        }
        let mut p = 1.0;
        for (d, ws) in docs.iter().enumerate() {
            p /= rising(k as f64 * alpha, ws.len());
            for t in 0..k {
                p *= rising(alpha, ndt[d][t]);
            }
        }
        for t in 0..k {
            p /= rising(v as f64 * beta, nt[t]);
            for w in nwt.iter() {
                p *= rising(beta, w[t]);
            }
        }
        *slot = p;
    }
    let total: f64 = exact.iter().sum();
    exact.iter_mut().for_each(|p| *p /= total);

    let mut s = GibbsState::new(&corpus, k, alpha, beta, 17);
    s.sweep(200).map_err(|e| e.to_string())?;
    let sweeps = 50_000;
    let mut counts = vec![0usize; states];
    for _ in 0..sweeps {
        s.sweep(1).map_err(|e| e.to_string())?;
        let code = s.assignments().iter().enumerate().map(|(i, &t)| (t as usize) << i).sum::<usize>();
        counts[code] += 1;
    }
    let tv = 0.5 * counts.iter().zip(&exact).map(|(&c, &p)| (c as f64 / sweeps as f64 - p).abs()).sum::<f64>();
    ensure(tv < 0.02, || format!("total variation {tv:.4}"))?;
    Ok(format!("{n} tokens, {states} states, {sweeps} sweeps, TV = {tv:.4}"))
}

fn vb_correctness() -> Outcome {
    let corpus = SyntheticConfig { n_categories: 4, docs_per_category: 25, vocab_size: 300, doc_length: 60, seed: 5, ..SyntheticConfig::default() }
        .generate()
        .map_err(|e| e.to_string())?;
    assert_eq!(corpus.num_docs(), 100);
    let tokens = corpus.num_tokens() as f64;
    let mut s = VbState::new(&corpus, 6, 0.1, 0.01, 3).with_config(VbConfig::default());
    let mut prev = s.elbo().map_err(|e| e.to_string())?;
    let mut worst_mass = 0.0f64;
    let iterations = 100;
    for it in 0..iterations {
        s.em_iteration().map_err(|e| e.to_string())?;
        let elbo = s.elbo().map_err(|e| e.to_string())?;
        ensure(elbo >= prev - 1e-9 * prev.abs(), || format!("ELBO fell at iteration {}: {prev} -> {elbo}", it + 1))?;
        prev = elbo;
        let mut mass = 0.0;
        for t in 0..s.num_topics() {
            for w in 0..corpus.vocab_size() {
                mass += s.lambda().get(t, w) - s.priors().beta.get(t, w);
            }
        }
        worst_mass = worst_mass.max((mass - tokens).abs());
    }
    ensure(worst_mass < 1e-6, || format!("mass error {worst_mass:e}"))?;
    Ok(format!("{iterations} EM iterations monotone, max |sum(lambda - beta) - tokens| = {worst_mass:.1e}"))
}


/// A topic of fifteen strong words plus ten fillers, and a target word whose
/// total count (20) is below the count of the topic's 10th word (60) and
/// above no filler (10 each) once split across topics.
fn add_word_case_study() -> Outcome {
    let a = |i: usize| i as u32; // 0..15 strong words of theme A
    let f = |i: usize| 15 + i as u32; // 15..25 fillers of theme A
    let b = |i: usize| 25 + i as u32; // 25..40 words of theme B
    let x = 40u32;
    let mut docs = vec![];
    for d in 0..20 {
        let mut doc = vec![];
        for i in 0..15 {
            let c = if i < 5 { 4 } else if i < 10 { 3 } else { 2 };
            doc.extend(std::iter::repeat_n(a(i), c));
        }
        // filler i sits in the ten A docs with d % 2 == i % 2, count 10 each
        for i in (d % 2..10).step_by(2) {
            doc.push(f(i));
        }
        if d < 5 {
            doc.push(x);
        }
        docs.push(doc);
    }
    for d in 0..20 {
        let mut doc = vec![];
        for i in 0..15 {
            let c = if i < 5 { 4 } else if i < 10 { 3 } else { 2 };
            doc.extend(std::iter::repeat_n(b(i), c));
        }
        if d < 15 {
            doc.push(x);
        }
        docs.push(doc);
    }
    let corpus = corpus_of(&docs, 41);
    let counts = corpus.word_counts();
    let train = TrainConfig { gibbs_sweeps: 200, ..TrainConfig::default() };
    let refine = RefineConfig::default();
    let x = x as usize;

    let mut ranks = HashMap::new();
    for backend in [Backend::InfoGibbs, Backend::ConstGibbs] {
        let mut model = Model::train(backend, &corpus, 2, 11, &train).map_err(|e| e.to_string())?;
        let pre = model.snapshot();
        let topic = (0..2).max_by(|&s, &t| pre.word_probs.get(s, 0).total_cmp(&pre.word_probs.get(t, 0))).unwrap();
        let tenth = pre.top_words(topic, 10)[9] as usize;
        ensure(counts[x] < counts[tenth], || format!("fixture: count(x) = {} vs 10th word {}", counts[x], counts[tenth]))?;
        let before = pre.word_rank(topic, x);
        let out = apply_refinement(&mut model, &RefinementOp::AddWord { topic, word: x }, &refine).map_err(|e| e.to_string())?;
        let after = out.post_snapshot.word_rank(topic, x);
        if let ModelState::Gibbs(s) = &model.state {
            ensure(s.num_topics() == 2, || "topic count changed".into())?;
        }
        ranks.insert(backend, (before, after));
    }
    let (ib, ia) = ranks[&Backend::InfoGibbs];
    let (cb, ca) = ranks[&Backend::ConstGibbs];
    ensure(ia == 1, || format!("info-gibbs rank {ib} -> {ia}"))?;
    ensure(ca < cb && ca > 10, || format!("const-gibbs rank {cb} -> {ca}"))?;
    Ok(format!("info-gibbs rank {ib} -> {ia}; const-gibbs rank {cb} -> {ca}"))
}

fn kruskal_oracle() -> Outcome {
    let kw = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]).map_err(|e| e.to_string())?;
    // H = 12/(N(N+1)) * sum(R_i^2/n_i) - 3(N+1) with rank sums 6, 15, 24.
    let h = 12.0 / (9.0 * 10.0) * (36.0 + 225.0 + 576.0) / 3.0 - 30.0;
    ensure((kw.h - h).abs() < 1e-3 && (kw.h - 7.2).abs() < 1e-3, || format!("H = {}", kw.h))?;
    ensure(kw.df == 2 && (kw.p - 0.02732).abs() < 1e-3 && (kw.p - (-3.6f64).exp()).abs() < 1e-3, || format!("p = {}", kw.p))?;
    let same = kruskal_wallis(&[vec![2.0, 2.0, 2.0], vec![2.0, 2.0], vec![2.0, 2.0, 2.0]]).map_err(|e| e.to_string())?;
    ensure(same.h == 0.0 && same.p == 1.0, || format!("identical groups: H = {}, p = {}", same.h, same.p))?;
    Ok(format!("H = {:.4}, p = {:.5}; identical groups H = 0, p = 1", kw.h, kw.p))
}

fn npmi_fixtures() -> Outcome {
    // w0 and w1 appear together in exactly the documents containing either.
    let perfect = ReferenceStats::from_corpus(&corpus_of(&[vec![0, 1], vec![0, 1, 2], vec![2], vec![2, 3]], 4));
    let v = perfect.npmi(Some(0), Some(1), 0.0);
    ensure((v - 1.0).abs() < 1e-9, || format!("perfect co-occurrence NPMI = {v}"))?;

    // 4 docs, wi in 2, wj in 2, both in 1: P(i,j) = P(i)P(j) = 0.25.
    let hand = ReferenceStats::from_corpus(&corpus_of(&[vec![0, 1], vec![0], vec![1], vec![2]], 3));
    let h = hand.npmi(Some(0), Some(1), 0.0);
    ensure(h.abs() < 1e-9, || format!("hand example NPMI = {h}"))?;

    let mut state = 99u64;
    let mut next = |m: u64| {
        state = mix_seed(state);
        (state % m) as u32
    };
    let docs: Vec<Vec<u32>> = (0..60).map(|_| (0..1 + next(12)).map(|_| next(40)).collect()).collect();
    let stats = ReferenceStats::from_corpus(&corpus_of(&docs, 40));
    for _ in 0..100 {
        let (i, j) = (next(40) as usize, next(40) as usize);
        for smoothing in [0.0, 1.0] {
            let (a, b) = (stats.npmi(Some(i), Some(j), smoothing), stats.npmi(Some(j), Some(i), smoothing));
            ensure(a == b && (-1.0..=1.0).contains(&a), || format!("NPMI({i},{j}) = {a} but NPMI({j},{i}) = {b}"))?;
        }
    }
    Ok(format!("perfect = {v:.12}, hand = {h:.1e}, 100 random pairs symmetric"))
}

struct Desk {
    records: Vec<ExperimentRecord>,
    summaries: Vec<CellSummary>,
    first_run: Duration,
    identical: bool,
}

impl Desk {
    fn cell(&self, backend: Backend, kind: RefinementKind, user: UserKind) -> Result<&CellSummary, String> {
        self.summaries
            .iter()
            .find(|s| s.backend == backend && s.refinement == kind && s.user == user)
            .ok_or_else(|| format!("no records for {backend}/{kind}/{user}"))
    }

    fn mean(&self, backend: Backend, kind: RefinementKind, user: UserKind) -> Result<f64, String> {
        let c = self.cell(backend, kind, user)?;
        ensure(c.control.n == 25, || format!("{backend}/{kind}/{user} has {} runs", c.control.n))?;
        Ok(c.control.mean)
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn simulate(out: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    let root = workspace_root();
    let config = ExperimentConfig::from_file(root.join("configs/desk.toml")).map_err(|e| e.to_string())?;
    let bench = Workbench::prepare(&config, &root.join("configs")).map_err(|e| e.to_string())?;
    let output = run_experiment(&bench, &config);
    ensure(output.failures.is_empty(), || format!("{} runs failed", output.failures.len()))?;
    write_outputs(out, &output).map_err(|e| e.to_string())?;
    Ok(start.elapsed())
}

fn run_desk() -> Result<Desk, String> {
    let dir = std::env::temp_dir().join(format!("hltm-acceptance-{}", std::process::id()));
    let (a, b) = (dir.join("a"), dir.join("b"));
    let first_run = simulate(&a)?;
    simulate(&b)?;
    let ra = std::fs::read(a.join("records.csv")).map_err(|e| e.to_string())?;
    let rb = std::fs::read(b.join("records.csv")).map_err(|e| e.to_string())?;
    let records = read_records(&a.join("records.csv")).map_err(|e| e.to_string())?;
    let _ = std::fs::remove_dir_all(&dir);
    Ok(Desk { summaries: summarize(&records), records, first_run, identical: ra == rb })
}

fn remove_word(desk: &Desk) -> Outcome {
    let mut parts = vec![];
    for backend in Backend::ALL {
        let c = desk.cell(backend, RefinementKind::RemoveWord, UserKind::Good)?;
        ensure(c.control.n == 25, || format!("{backend}: {} runs", c.control.n))?;
        ensure(c.control.mean >= 0.99 && c.control.sd <= 0.02, || {
            format!("{backend}: {:.3} ({:.3})", c.control.mean, c.control.sd)
        })?;
        parts.push(format!("{backend} {:.3} ({:.3})", c.control.mean, c.control.sd));
    }
    Ok(parts.join(", "))
}

fn remove_document(desk: &Desk) -> Outcome {
    let mut parts = vec![];
    for user in UserKind::ALL {
        let cg = desk.mean(Backend::ConstGibbs, RefinementKind::RemoveDocument, user)?;
        let ig = desk.mean(Backend::InfoGibbs, RefinementKind::RemoveDocument, user)?;
        let vb = desk.mean(Backend::InfoVb, RefinementKind::RemoveDocument, user)?;
        ensure(cg >= 0.99 && ig >= 0.99, || format!("{user}: const {cg:.3}, info {ig:.3}"))?;
        ensure(vb < cg && vb < ig, || format!("{user}: vb {vb:.3} vs gibbs {cg:.3}/{ig:.3}"))?;
        parts.push(format!("{user}: const {cg:.2} info {ig:.2} vb {vb:.2}"));
    }
    Ok(parts.join("; "))
}

fn create_contrast(desk: &Desk) -> Outcome {
    let k = RefinementKind::CreateTopic;
    let cr = desk.mean(Backend::ConstGibbs, k, UserKind::Random)?;
    let ir = desk.mean(Backend::InfoGibbs, k, UserKind::Random)?;
    let vr = desk.mean(Backend::InfoVb, k, UserKind::Random)?;
    let cg = desk.mean(Backend::ConstGibbs, k, UserKind::Good)?;
    let detail = format!("random: const {cr:.2}, info-gibbs {ir:.2}, info-vb {vr:.2}; good const {cg:.2}");
    ensure(cr < 0.3 && ir > 0.9 && vr > 0.9 && cg > 0.5, || detail.clone())?;
    Ok(detail)
}

fn reorder_weakness(desk: &Desk) -> Outcome {
    let k = RefinementKind::ChangeWordOrder;
    let mut good = vec![];
    let mut overshoot = vec![];
    for backend in Backend::ALL {
        let g = desk.mean(backend, k, UserKind::Good)?;
        ensure(g < 0.7, || format!("good {backend} mean {g:.3}"))?;
        good.push(format!("{backend} {g:.2}"));
        let r = desk.cell(backend, k, UserKind::Random)?;
        if r.control.mean > 1.0 - r.control.sd {
            overshoot.push(format!("{backend} {:.2} ({:.2})", r.control.mean, r.control.sd));
        }
    }
    ensure(!overshoot.is_empty(), || {
        let rs: Vec<String> = Backend::ALL
            .iter()
            .filter_map(|&b| desk.cell(b, k, UserKind::Random).ok())
            .map(|c| format!("{} {:.2} ({:.2})", c.backend, c.control.mean, c.control.sd))
            .collect();
        format!("no random-user overshoot: {}", rs.join(", "))
    })?;
    Ok(format!("good: {}; random overshoot: {}", good.join(", "), overshoot.join(", ")))
}

fn determinism(desk: &Desk) -> Outcome {
    let expected = 3 * 7 * 2 * 25;
    ensure(desk.records.len() == expected, || format!("{} records, expected {expected}", desk.records.len()))?;
    ensure(desk.identical, || "records.csv differs between two runs".into())?;
    let limit = Duration::from_secs(30 * 60);
    ensure(desk.first_run < limit, || format!("desk run took {:.0?}", desk.first_run))?;
    Ok(format!("{expected} records identical across runs; desk run {:.0?}", desk.first_run))
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome, Duration)> = vec![];
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(&mut *f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {name}: {detail} [{elapsed:.1?}]");
        results.push((name, outcome, elapsed));
    };

    run("gibbs conditional exactness", &mut gibbs_conditional);
    run("sampler vs enumeration", &mut sampler_vs_enumeration);
    run("vb correctness", &mut vb_correctness);
    run("add word case study", &mut add_word_case_study);
    run("kruskal-wallis oracle", &mut kruskal_oracle);
    run("npmi fixtures", &mut npmi_fixtures);

    let start = Instant::now();
    match run_desk() {
        Ok(desk) => {
            println!("     desk matrix simulated twice in {:.0?}", start.elapsed());
            run("remove word", &mut || remove_word(&desk));
            run("remove document", &mut || remove_document(&desk));
            run("create topic contrast", &mut || create_contrast(&desk));
            run("reorder weakness", &mut || reorder_weakness(&desk));
            run("end-to-end determinism", &mut || determinism(&desk));
        }
        Err(e) => {
            for name in ["remove word", "remove document", "create topic contrast", "reorder weakness", "end-to-end determinism"] {
                run(name, &mut || Err(format!("desk run failed: {e}")));
            }
        }
    }

    let failed = results.iter().filter(|(_, o, _)| o.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
