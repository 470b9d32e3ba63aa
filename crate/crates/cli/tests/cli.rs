use std::path::Path;
use std::process::{Command, Output};

fn nplb(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nplb"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let o = nplb(args, cwd);
    assert!(
        o.status.success(),
        "nplb {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

const SMALL_TRAIN: [&str; 8] = [
    "--epochs",
    "2",
    "--n-triplets",
    "300",
    "--hidden",
    "16,8",
    "--output-dim",
    "4",
];

fn generated(dir: &Path) {
    ok(
        &["generate", "--seed", "7", "--sizes", "120,160,160", "--out", "gen"],
        dir,
    );
}

#[test]
fn generate_writes_cohort_bounds_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(
        &["generate", "--seed", "3", "--sizes", "20,30,30", "--out", "g"],
        dir.path(),
    );
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("cohort.csv"));
    let cohort = read(dir.path().join("g/cohort.csv"));
    assert!(cohort.starts_with("# nplb-cohort v1\n"));
    assert_eq!(cohort.lines().count(), 2 + 80);
    let bounds = read(dir.path().join("g/bounds.txt"));
    assert!(bounds.contains("bona_fide_healthy,any,fasting_glucose,mg/dL,70,100,true,true"));
    assert!(bounds.contains("bona_fide_healthy,male,hdl"));
    assert!(bounds.contains("bona_fide_healthy,female,hdl"));
    let manifest = read(dir.path().join("g/manifest.json"));
    assert!(manifest.contains("\"command\": \"generate\""));
}

#[test]
fn train_and_benchmark_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    for tag in ["a", "b"] {
        let out = format!("train-{tag}");
        let mut args = vec!["train", "--cohort", "gen/cohort.csv", "--seed", "11", "--out", &out];
        args.extend(SMALL_TRAIN);
        ok(&args, d);
        let bout = format!("bench-{tag}");
        let mut args = vec![
            "benchmark",
            "--seeds",
            "2",
            "--per-class",
            "40",
            "--k",
            "5",
            "--out",
            &bout,
        ];
        args.extend(SMALL_TRAIN);
        ok(&args, d);
    }
    for f in ["model.ckpt", "loss_log.csv", "config.json", "manifest.json"] {
        assert_eq!(read(d.join("train-a").join(f)), read(d.join("train-b").join(f)), "{f}");
    }
    for f in ["benchmark.txt", "config.json", "manifest.json"] {
        assert_eq!(read(d.join("bench-a").join(f)), read(d.join("bench-b").join(f)), "{f}");
    }
}

#[test]
fn odd_power_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    let o = nplb(
        &["train", "--cohort", "gen/cohort.csv", "--loss", "nplb", "--p", "3"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("even"));
}

#[test]
fn risk_reports_one_block_per_backend() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    let mut args = vec!["train", "--cohort", "gen/cohort.csv", "--out", "model"];
    args.extend(SMALL_TRAIN);
    ok(&args, d);
    ok(
        &[
            "risk",
            "--cohort",
            "gen/cohort.csv",
            "--checkpoint",
            "model/model.ckpt",
            "--backend",
            "raw,mahalanobis,p0,embedding",
            "--out",
            "risk",
        ],
        d,
    );
    let report = read(d.join("risk/risk_report.txt"));
    assert_eq!(report.matches("[distribution ").count(), 4);
    for b in ["raw", "mahalanobis", "p0", "embedding"] {
        assert!(report.contains(&format!("[distribution backend={b}]")), "{b}");
    }

    ok(
        &[
            "pseudotime",
            "--cohort",
            "gen/cohort.csv",
            "--checkpoint",
            "model/model.ckpt",
            "--backend",
            "raw,embedding",
            "--out",
            "pt",
        ],
        d,
    );
    assert!(read(d.join("pt/pseudotime.txt")).contains("embedding"));

    ok(
        &[
            "embed",
            "--cohort",
            "gen/cohort.csv",
            "--checkpoint",
            "model/model.ckpt",
            "--out",
            "emb",
        ],
        d,
    );
    let emb = read(d.join("emb/embeddings.csv"));
    assert!(emb.starts_with("id,e0,e1,e2,e3\n"));
    assert_eq!(emb.lines().count(), 1 + 440);
}

#[test]
fn embedding_backend_needs_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    let o = nplb(
        &["risk", "--cohort", "gen/cohort.csv", "--backend", "embedding"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn benchmark_has_one_row_per_loss() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "benchmark",
        "--losses",
        "traditional,swap,nplb",
        "--seeds",
        "5",
        "--per-class",
        "30",
        "--k",
        "5",
        "--out",
        "b",
    ];
    args.extend(SMALL_TRAIN);
    ok(&args, dir.path());
    let text = read(dir.path().join("b/benchmark.txt"));
    let table: Vec<&str> = text.split("\n\n").next().unwrap().lines().skip(2).collect();
    assert_eq!(table.len(), 3);
    let runs = text
        .split("[runs]")
        .nth(1)
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty())
        .count();
    assert_eq!(runs, 1 + 15);
}

#[test]
fn augmenting_without_bona_fide_records_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["generate", "--sizes", "0,50,0", "--out", "g"], d);
    let o = nplb(&["augment", "--cohort", "g/cohort.csv", "--out", "a"], d);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("bona fide"));
}

#[test]
fn preprocess_and_augment_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generated(d);
    ok(&["preprocess", "--cohort", "gen/cohort.csv", "--out", "pp"], d);
    for f in [
        "preprocessed_female.csv",
        "preprocessed_male.csv",
        "preprocess_report.txt",
    ] {
        assert!(d.join("pp").join(f).exists(), "{f}");
    }
    ok(
        &[
            "augment",
            "--cohort",
            "gen/cohort.csv",
            "--fold",
            "1",
            "--seed",
            "2",
            "--out",
            "aug",
        ],
        d,
    );
    let aug = read(d.join("aug/augmented.csv"));
    assert_eq!(aug.lines().filter(|l| l.starts_with("aug-")).count(), 120);
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(nplb(&["generate", "--sizes", "1,2"], d).status.code(), Some(1));
    assert_eq!(nplb(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(nplb(&["--help"], d).status.code(), Some(0));
    let missing = nplb(&["risk", "--cohort", "nope.csv"], d);
    assert!(!missing.status.success());
    assert_ne!(missing.status.code(), Some(1));
    std::fs::write(d.join("cfg.json"), "{\"unknown_field\": 1}").unwrap();
    assert_eq!(nplb(&["generate", "--config", "cfg.json"], d).status.code(), Some(1));
}
