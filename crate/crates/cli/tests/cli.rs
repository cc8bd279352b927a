use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
runs_per_cell = 2
master_seed = 11
refinements = ["remove_word", "merge_topics", "create_topic"]

[corpus]
source = "synthetic"
n_categories = 4
docs_per_category = 12
vocab_size = 160
doc_length = 30
seed = 2

[pool]
small_k = 3
large_k = 6
models_per_size = 2
seed = 4

[train]
gibbs_sweeps = 30
em_iterations = 10
"#;

fn hltm(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_hltm")).args(args).output().unwrap();
    assert!(out.status.success(), "hltm {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_is_reproducible_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    hltm(&["simulate", "--config", p(&cfg), "--out", p(&a)]);
    hltm(&["simulate", "--config", p(&cfg), "--out", p(&b)]);
    let records = fs::read(a.join("records.csv")).unwrap();
    assert_eq!(records, fs::read(b.join("records.csv")).unwrap());
    // 3 backends x 3 refinements x 2 users x 2 runs, plus the header.
    assert_eq!(String::from_utf8_lossy(&records).lines().count(), 37);
    for f in ["summary.csv", "kw.csv", "timings.csv", "failures.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }

    // A saved pool gives the same records as training in place.
    let pool = dir.path().join("pool.json");
    hltm(&["train-pool", "--config", p(&cfg), "--out", p(&pool)]);
    hltm(&["simulate", "--config", p(&cfg), "--pool", p(&pool), "--out", p(&c)]);
    assert_eq!(records, fs::read(c.join("records.csv")).unwrap());

    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    fs::remove_file(a.join("summary.csv")).unwrap();
    let printed = hltm(&["report", "--records", p(&a.join("records.csv"))]);
    assert_eq!(fs::read_to_string(a.join("summary.csv")).unwrap(), summary);
    assert_eq!(printed.lines().count(), 1 + 3 * 3 * 2);

    let kw = hltm(&["kw-test", "--records", p(&a.join("records.csv")), "--metric", "control"]);
    assert_eq!(kw.lines().count(), 1 + 2 * 3);
    assert!(kw.lines().skip(1).all(|l| l.contains("\tcontrol\t")));
}

#[test]
fn default_config_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("default.toml");
    fs::write(&cfg, hltm(&["default-config"])).unwrap();
    let text = fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("runs_per_cell = 100"));
    assert!(text.contains("master_seed = 1"));
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "runs_per_cell = \"many\"").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hltm"))
        .args(["simulate", "--config", p(&cfg), "--out", p(dir.path())])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}
