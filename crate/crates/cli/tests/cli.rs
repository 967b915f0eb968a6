use std::path::Path;
use std::process::{Command, Output};

fn treespec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treespec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--synthetic",
        "40",
        "--set",
        "prompts_per_domain=3",
        "--set",
        "max_new_tokens=12",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    treespec(&args)
}

#[test]
fn selftest_passes() {
    let out = treespec(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}

#[test]
fn run_then_analyze_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = small_run(&run_dir, &["--save-models"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["records.csv", "summary.json", "run.json", "prompts.jsonl", "tables.txt", "draft.ngram", "target.ngram"] {
        assert!(run_dir.join(name).is_file(), "missing {name}");
    }

    let records = run_dir.join("records.csv");
    let again = dir.path().join("again");
    let out = treespec(&["analyze", "--records", records.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read_to_string(again.join("summary.json")).unwrap(),
        std::fs::read_to_string(run_dir.join("summary.json")).unwrap()
    );

    let out = treespec(&["tables", "--records", records.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        std::fs::read_to_string(run_dir.join("tables.txt")).unwrap()
    );
}

#[test]
fn reruns_write_identical_records() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_run(&a, &[]).status.success());
    assert!(small_run(&b, &[]).status.success());
    assert_eq!(
        std::fs::read(a.join("records.csv")).unwrap(),
        std::fs::read(b.join("records.csv")).unwrap()
    );
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "max_depth = 2\nprompts_per_domain = 9\nearly_stop = false\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = small_run(&out_dir, &["--config", cfg.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    // --set wins over the file
    assert_eq!(run["config"]["prompts_per_domain"], 3);
    assert_eq!(run["config"]["max_depth"], 2);
    assert_eq!(run["metadata"]["tree_nodes"], 4 * 3 * 12 * 8);
    assert!(!out_dir.join("records.csv").exists());
}

#[test]
fn corpus_directory_input() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    for (domain, text) in [("alpha", "a b c a b d a b c"), ("beta", "x y z x y x y z")] {
        std::fs::create_dir_all(corpus.join(domain)).unwrap();
        std::fs::write(corpus.join(domain).join("doc1.txt"), text).unwrap();
        std::fs::write(corpus.join(domain).join("doc2.txt"), format!("{text} {text}")).unwrap();
    }
    let out_dir = dir.path().join("out");
    let out = treespec(&[
        "run",
        "--corpus-dir",
        corpus.to_str().unwrap(),
        "--set",
        "prompts_per_domain=2",
        "--set",
        "max_new_tokens=4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(out_dir.join("summary.json")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    let domains: Vec<&String> = summary.as_object().unwrap().keys().collect();
    assert_eq!(domains, ["alpha", "beta"]);
}

#[test]
fn dump_tree_prints_nodes_and_mask() {
    let out = treespec(&["dump-tree", "--synthetic", "30", "--context", "solve for x"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("id\tparent\ttoken\tdepth\tp_draft\tcum_logp"));
    assert!(stdout.contains("bonus token:"));
    assert!(stdout.contains("attention mask"));
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "not,a,record,file\n").unwrap();
    assert_eq!(treespec(&["tables", "--records", bad.to_str().unwrap()]).status.code(), Some(1));
    let out = dir.path().join("out");
    assert_eq!(small_run(&out, &["--set", "bogus=3"]).status.code(), Some(1));
    assert_eq!(small_run(&out, &["--set", "max_nodes=1"]).status.code(), Some(1));
    assert_eq!(treespec(&["run", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn io_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(treespec(&["tables", "--records", missing.to_str().unwrap()]).status.code(), Some(2));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    assert_eq!(small_run(&blocker.join("out"), &[]).status.code(), Some(2));
    let out = dir.path().join("out");
    let cfg = dir.path().join("absent.toml");
    assert_eq!(small_run(&out, &["--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}
