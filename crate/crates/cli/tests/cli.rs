use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use blockmerge::edit::Editor;
use blockmerge::model::ReplicaId;
use blockmerge::scenario::{self, default_fixture_dir};
use blockmerge::store;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_blockmerge"));
    cmd.env_remove("BLOCKMERGE_FIXTURES");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn fixture(name: &str) -> String {
    default_fixture_dir().join(name).to_str().unwrap().to_string()
}

fn golden(name: &str) -> String {
    fs::read_to_string(default_fixture_dir().join(format!("{name}.txt"))).unwrap()
}

#[test]
fn demo_reports_every_figure() {
    let out = run(&["demo"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    for n in 2..=7 {
        assert!(text.contains(&format!("Fig.{n} OK\n")), "{text}");
    }
    assert_eq!(text, stdout(&run(&["demo"])));
}

fn copy_fixtures(to: &Path) {
    for entry in fs::read_dir(default_fixture_dir()).unwrap() {
        let path = entry.unwrap().path();
        fs::copy(&path, to.join(path.file_name().unwrap())).unwrap();
    }
}

#[test]
fn demo_fails_on_a_corrupted_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixtures(dir.path());
    let fig5 = dir.path().join("fig5.txt");
    fs::write(&fig5, fs::read_to_string(&fig5).unwrap().replace("| TP", "| XX")).unwrap();
    let out = bin().arg("demo").env("BLOCKMERGE_FIXTURES", dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("Fig.5 MISMATCH") && text.contains("Fig.4 OK"), "{text}");
    assert!(text.contains("XX") && text.contains("TP"), "diff should show both sides: {text}");
}

#[test]
fn demo_fails_on_a_corrupted_log() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixtures(dir.path());
    fs::write(dir.path().join("tabulate.jsonl"), "{not json\n").unwrap();
    let out = run(&["demo", "--fixtures", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tabulate.jsonl"));
}

#[test]
fn merge_of_the_organizer_logs_is_order_independent() {
    let (base, a, b) = (fixture("fig2.json"), fixture("add-and-sort.jsonl"), fixture("tabulate.jsonl"));
    for policy in ["prefer-a", "prefer-b", "fail-on-conflict"] {
        let forward = run(&["merge", &base, &a, &b, "--policy", policy]);
        let backward = run(&["merge", &base, &b, &a, "--policy", policy]);
        assert!(forward.status.success());
        assert_eq!(stdout(&forward), golden("fig5"));
        assert_eq!(forward.stdout, backward.stdout);
    }
    let json_a = run(&["merge", &base, &a, &b, "--json"]);
    let json_b = run(&["merge", &base, &b, &a, "--json"]);
    assert_eq!(json_a.stdout, json_b.stdout);
}

/// Two logs that set the same item to different texts.
fn conflicting_logs(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let (base, ids) = scenario::figure2();
    let base_path = dir.join("base.json");
    store::save_document(&base, &base_path).unwrap();
    let mut paths = Vec::new();
    for (replica, text) in [("org1", "Adele G."), ("org2", "Adele Goldberg-Smith")] {
        let mut editor = Editor::new(base.clone(), ReplicaId::new(replica).unwrap());
        editor.set_text(&ids.speaker_items[0], text).unwrap();
        let path = dir.join(format!("{replica}.jsonl"));
        store::write_log(&path, editor.log()).unwrap();
        paths.push(path);
    }
    (base_path, paths.remove(0), paths.remove(0))
}

#[test]
fn conflicts_fail_the_strict_policy() {
    let dir = tempfile::tempdir().unwrap();
    let (base, a, b) = conflicting_logs(dir.path());
    let report = dir.path().join("report.json");
    let args = |policy: &'static str| {
        vec![
            "merge".to_string(),
            base.to_str().unwrap().into(),
            a.to_str().unwrap().into(),
            b.to_str().unwrap().into(),
            "--policy".into(),
            policy.into(),
            "--report".into(),
            report.to_str().unwrap().into(),
        ]
    };
    let out = bin().args(args("fail-on-conflict")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("concurrent-set-value"));
    let listed: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(listed.as_array().unwrap().len(), 1);

    let out = bin().args(args("prefer-b")).output().unwrap();
    assert!(out.status.success());
    assert!(stdout(&out).contains("- Adele Goldberg-Smith\n"));
}

#[test]
fn prompt_policy_reads_choices_from_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let (base, a, b) = conflicting_logs(dir.path());
    let prompt = |input: &str| {
        let mut child = bin()
            .args(["merge", base.to_str().unwrap(), a.to_str().unwrap(), b.to_str().unwrap(), "--policy", "prompt"])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
        child.wait_with_output().unwrap()
    };
    let chosen = prompt("=Adele\n");
    assert!(chosen.status.success());
    assert!(stdout(&chosen).contains("- Adele\n"));
    let closed = prompt("");
    assert_eq!(closed.status.code(), Some(2));
}

#[test]
fn merge_rejects_logs_on_another_base() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a, b) = conflicting_logs(dir.path());
    let (other, _) = scenario::figure6();
    let other_path = dir.path().join("other.json");
    store::save_document(&other, &other_path).unwrap();
    let out = run(&["merge", other_path.to_str().unwrap(), a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("based on"));
}

#[test]
fn replay_and_render() {
    let replayed = run(&["replay", &fixture("fig2.json"), &fixture("budget.jsonl")]);
    assert!(replayed.status.success());
    assert_eq!(replayed.stdout, run(&["replay", &fixture("fig2.json"), &fixture("budget.jsonl")]).stdout);
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("fig6.json");
    fs::write(&doc, &replayed.stdout).unwrap();
    assert_eq!(stdout(&run(&["render", doc.to_str().unwrap()])), golden("fig6"));
}

#[test]
fn gen_fixtures_matches_the_shipped_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["gen-fixtures", "--dir", dir.path().to_str().unwrap()]).status.success());
    for name in scenario::fixture_files() {
        assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(default_fixture_dir().join(name)).unwrap(), "{name}");
    }
}
