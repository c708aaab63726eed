mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sew_core::commands::{cmd_eval, cmd_evolve, cmd_generate, cmd_search, CommandError, Options};
use sew_core::config::{BackendKind, RunConfig};

fn config(rel: &str) -> RunConfig {
    RunConfig::load(&common::workspace_file(rel)).unwrap()
}

fn opts(out: &Path) -> Options {
    Options {
        out_dir: Some(out.to_path_buf()),
        ..Options::default()
    }
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn replay_of(mut cfg: RunConfig, transcript: &Path) -> RunConfig {
    cfg.backend.kind = BackendKind::Replay;
    cfg.backend.transcript = Some(transcript.to_path_buf());
    cfg.backend.rules = None;
    cfg
}

#[test]
fn sample_configs_load() {
    for rel in [
        "configs/desk/eval.toml",
        "configs/search/search.toml",
        "configs/search/replay.toml",
    ] {
        let cfg = config(rel);
        cfg.check().unwrap();
        assert!(cfg.out_dir.is_some(), "{rel}");
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "seed = 1\nbogus = 2\n[backend]\nkind = \"echo\"\n").unwrap();
    let err: CommandError = RunConfig::load(&path).unwrap_err().into();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_corpus_exits_with_config_code() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config("configs/search/search.toml");
    cfg.corpus.path = Some("does/not/exist.corpus".into());
    let err = cmd_generate(cfg, &opts(out.path())).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn missing_output_directory_is_a_config_error() {
    let mut cfg = config("configs/search/search.toml");
    cfg.out_dir = None;
    assert_eq!(cmd_generate(cfg, &Options::default()).unwrap_err().exit_code(), 2);
}

#[test]
fn replay_miss_exits_with_backend_code() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let cfg = replay_of(config("configs/search/search.toml"), &empty);
    let err = cmd_generate(cfg, &opts(&dir.path().join("out"))).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    // The (empty) transcript is still written for inspection.
    assert!(dir.path().join("out/transcript.jsonl").exists());
}

#[test]
fn invalid_evolved_workflow_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("configs/search/search.toml");
    cfg.workflow.schemes = vec!["yaml".parse().unwrap()];
    // The scripted rules turn mutation prompt 2 into a workflow that ends
    // with the reviewer.
    cfg.corpus.mutation_ids = Some(vec![2]);
    let out = dir.path().join("out");
    let err = cmd_evolve(cfg, &opts(&out)).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
    let validity = fs::read_to_string(out.join("validity.json")).unwrap();
    assert!(validity.contains("NONTERMINAL_CODER"), "{validity}");
    assert!(out.join("workflows/evolved.yaml").exists());
}

#[test]
fn sandbox_failure_exits_with_code_five() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("configs/desk/eval.toml");
    cfg.sandbox.interpreter_command = vec!["/nonexistent/python3".into(), "{source}".into()];
    cfg.sandbox.syntax_check_command = None;
    let err = cmd_eval(cfg, &opts(dir.path())).unwrap_err();
    assert_eq!(err.exit_code(), 5, "{err}");
}

#[test]
fn evolve_writes_workflows_agents_and_lineage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = config("configs/search/search.toml");
    cfg.corpus.mutation_ids = Some(vec![1]);
    let s = cmd_evolve(cfg, &opts(&out)).unwrap();
    // Three agents evolved with DE1: 2 + 3 + 3 calls.
    assert_eq!(s.calls, 8);
    for f in [
        "workflows/default.pysteps",
        "workflows/evolved.pysteps",
        "agents/code_generation_agent.prompt.txt",
        "agents/code_reviewer_agent.prompt.txt",
        "agents/code_rewriting_agent.prompt.txt",
        "agents/default/code_rewriting_agent.prompt.txt",
        "lineage.jsonl",
        "config.resolved.json",
        "fingerprint.txt",
        "transcript.jsonl",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(out.join("lineage.jsonl")).unwrap().lines().count(), 4);
    let fp = fs::read_to_string(out.join("fingerprint.txt")).unwrap();
    assert_eq!(fp.trim().len(), 64);
}

#[test]
fn eval_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let recorded = dir.path().join("recorded");
    cmd_eval(config("configs/desk/eval.toml"), &opts(&recorded)).unwrap();

    let replay = replay_of(config("configs/desk/eval.toml"), &recorded.join("transcript.jsonl"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cmd_eval(replay.clone(), &opts(&a)).unwrap();
    cmd_eval(replay, &opts(&b)).unwrap();
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa, sb);
    assert!(sa.contains_key(Path::new("comparison.json")));
    // The replayed transcript reproduces the recorded one.
    assert_eq!(
        sa[Path::new("transcript.jsonl")],
        fs::read(recorded.join("transcript.jsonl")).unwrap()
    );
    // Reports reference the fingerprint stored next to them.
    let fp = String::from_utf8(sa[Path::new("fingerprint.txt")].clone()).unwrap();
    let report = String::from_utf8(sa[Path::new("report.json")].clone()).unwrap();
    assert!(report.contains(fp.trim()));
}

#[test]
fn baseline_flag_evaluates_the_single_agent() {
    let dir = tempfile::tempdir().unwrap();
    let o = Options {
        out_dir: Some(dir.path().to_path_buf()),
        baseline: true,
        ..Options::default()
    };
    let s = cmd_eval(config("configs/desk/eval.toml"), &o).unwrap();
    assert_eq!(s.calls, 10);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass_at"]["1"], 0.2);
    assert!(!dir.path().join("comparison.json").exists());
}

#[test]
fn seed_override_changes_the_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: u64, sub: &str| {
        let o = Options {
            out_dir: Some(dir.path().join(sub)),
            seed: Some(seed),
            baseline: false,
        };
        cmd_generate(config("configs/search/search.toml"), &o).unwrap();
        fs::read_to_string(dir.path().join(sub).join("fingerprint.txt")).unwrap()
    };
    assert_ne!(run(1, "a"), run(2, "b"));
}

#[test]
fn search_records_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("configs/search/search.toml");
    cfg.evolution.methods = vec!["DE1".parse().unwrap()];
    cmd_search(cfg, &opts(dir.path())).unwrap();
    let records = fs::read_to_string(dir.path().join("search/records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 6);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("search/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failures"], 1);
    assert!(dir.path().join("search/best/record.json").exists());
    assert!(dir.path().join("search/points/yaml-m1-DE1/lineage.jsonl").exists());
}
