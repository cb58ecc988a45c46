use std::fs;

use blockmerge::scenario::{default_fixture_dir, fixture_files, run_demo, write_fixtures};
use blockmerge::store;

#[test]
fn shipped_fixtures_match_the_scenario_builders() {
    let fresh = tempfile::tempdir().unwrap();
    write_fixtures(fresh.path()).unwrap();
    for name in fixture_files() {
        let shipped = fs::read_to_string(default_fixture_dir().join(name)).unwrap();
        let built = fs::read_to_string(fresh.path().join(name)).unwrap();
        assert_eq!(shipped, built, "{name} is stale; regenerate with `blockmerge gen-fixtures`");
    }
}

#[test]
fn demo_reproduces_every_golden_rendering() {
    for report in run_demo(&default_fixture_dir()).unwrap() {
        assert!(report.ok(), "{}:\n{}", report.name, report.diff());
    }
}

#[test]
fn fixture_logs_replay_deterministically() {
    let dir = default_fixture_dir();
    let base = store::load_document(&dir.join("fig2.json")).unwrap();
    for name in fixture_files().iter().filter(|n| n.ends_with(".jsonl")) {
        let log = store::read_log(&dir.join(name)).unwrap();
        let once = store::replay(&base, &log).unwrap().to_canonical_json();
        let twice = store::replay(&base, &store::read_log(&dir.join(name)).unwrap()).unwrap().to_canonical_json();
        assert_eq!(once, twice, "{name}");
    }
}
