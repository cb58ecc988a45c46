//! Acceptance criteria, one pass/fail line each. Runs as a plain binary so
//! the lines are printed even when everything passes.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use blockmerge::formula::{eval_formula, recompute_all, Value};
use blockmerge::merge::{merge, Policy};
use blockmerge::model::{Document, NodeId, NodeKind};
use blockmerge::scenario::{default_fixture_dir, fixture_files};
use blockmerge::store;

type Outcome = Result<String, String>;

fn cli() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_blockmerge"));
    cmd.env_remove("BLOCKMERGE_FIXTURES");
    cmd
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    if took < limit {
        Ok(())
    } else {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    }
}

fn figures() -> Outcome {
    let started = Instant::now();
    let out = cli().arg("demo").output().map_err(|e| e.to_string())?;
    let took = started.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    if !out.status.success() {
        return Err(format!("demo exited with {}:\n{text}", out.status));
    }
    for n in 3..=7 {
        if !text.contains(&format!("Fig.{n} OK\n")) {
            return Err(format!("no OK line for Fig.{n}:\n{text}"));
        }
    }
    within(started, Duration::from_secs(1))?;
    Ok(format!("Figs. 3-7 byte-exact in {took:.2?}"))
}

/// The merged budget document in both argument orders, plus the ids of the
/// count and expenses values.
fn budget_merge() -> Result<(Vec<Document>, NodeId, NodeId), String> {
    let dir = default_fixture_dir();
    let base = store::load_document(&dir.join("fig2.json")).map_err(|e| e.to_string())?;
    let first = store::read_log(&dir.join("add-sort-tabulate.jsonl")).map_err(|e| e.to_string())?;
    let budget = store::read_log(&dir.join("budget.jsonl")).map_err(|e| e.to_string())?;
    let with_budget = store::replay(&base, &budget).map_err(|e| e.to_string())?;
    let computed: Vec<NodeId> =
        with_budget.nodes().filter(|n| n.kind == NodeKind::Computed).map(|n| n.id.clone()).collect();
    let [count, expenses] = <[NodeId; 2]>::try_from(computed).map_err(|c| format!("expected 2 computed values, got {c:?}"))?;
    let mut docs = Vec::new();
    for (a, b) in [(&first, &budget), (&budget, &first)] {
        let out = merge(&base, a, b, &Policy::PreferA).map_err(|e| e.to_string())?;
        if !out.conflicts.is_empty() {
            return Err(format!("unexpected conflicts: {:?}", out.conflicts));
        }
        docs.push(out.document);
    }
    Ok((docs, count, expenses))
}

fn formula_rewrite() -> Outcome {
    let (docs, count, expenses) = budget_merge()?;
    for doc in &docs {
        for (id, expected) in [(&count, "=COUNT(/table[id='speakers']/tbody/tr)"), (&expenses, "=/dl/dd[0] * /dl/dd[1]")] {
            let source = doc.find(id).and_then(|n| n.formula.as_ref()).map(ToString::to_string);
            if source.as_deref() != Some(expected) {
                return Err(format!("{id}: got {source:?}, want {expected:?}"));
            }
        }
    }
    Ok("count and expenses sources equal in both merge orders".into())
}

fn evaluation() -> Outcome {
    let (docs, count, expenses) = budget_merge()?;
    for doc in docs.iter().map(recompute_all) {
        for (id, expected) in [(&count, 4.0), (&expenses, 4800.0)] {
            match eval_formula(&doc, id) {
                Ok(Value::Number(n)) if n == expected => {}
                other => return Err(format!("{id}: got {other:?}, want {expected}")),
            }
        }
    }
    Ok("count = 4, expenses = 4800 exactly".into())
}

fn seeded(count: u64, limit: Duration, check: fn(u64) -> common::Check) -> Outcome {
    let started = Instant::now();
    let mut failures = Vec::new();
    for seed in 0..count {
        match std::panic::catch_unwind(|| check(seed)) {
            Ok(Ok(())) => {}
            Ok(Err(e)) => failures.push(e),
            Err(_) => failures.push(format!("seed {seed}: panicked")),
        }
    }
    let took = started.elapsed();
    if let Some(first) = failures.first() {
        return Err(format!("{}/{count} cases failed; first: {first}", failures.len()));
    }
    within(started, limit)?;
    Ok(format!("{count}/{count} cases in {took:.2?}"))
}

fn replay_determinism() -> Outcome {
    let dir = default_fixture_dir();
    let base = dir.join("fig2.json");
    let mut logs = 0;
    for name in fixture_files().iter().filter(|n| n.ends_with(".jsonl")) {
        let run = || {
            cli().arg("replay").arg(&base).arg(dir.join(name)).output().map_err(|e| e.to_string())
        };
        let (first, second) = (run()?, run()?);
        if !first.status.success() || first.stdout.is_empty() {
            return Err(format!("{name}: replay failed: {}", String::from_utf8_lossy(&first.stderr)));
        }
        if first.stdout != second.stdout {
            return Err(format!("{name}: two replays differ"));
        }
        logs += 1;
    }
    Ok(format!("{logs} fixture logs, two fresh processes each, identical output"))
}

fn main() -> ExitCode {
    let criteria: [(&str, Box<dyn Fn() -> Outcome>); 8] = [
        ("figure reproduction", Box::new(figures)),
        ("formula rewrite exactness", Box::new(formula_rewrite)),
        ("evaluation values", Box::new(evaluation)),
        ("commutativity suite", Box::new(|| seeded(1_000, Duration::from_secs(60), common::check_commutative))),
        ("completeness fuzz", Box::new(|| seeded(10_000, Duration::from_secs(300), common::check_merge_total))),
        ("rewrite-commutes oracle", Box::new(|| seeded(1_000, Duration::MAX, common::check_rewrite))),
        ("dirty-set soundness", Box::new(|| seeded(1_000, Duration::MAX, common::check_dirty))),
        ("replay determinism", Box::new(replay_determinism)),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, criterion) in criteria {
        match criterion() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
