use super::*;
use crate::edit::{apply, PrimitiveEdit};
use crate::formula::{eval_formula, recompute_all, Value};
use crate::scenario::{self, figure2, logs, Logs};
use crate::store::replay_ops;

fn fig5_rows(doc: &Document) -> Vec<String> {
    doc.render().lines().map(str::to_string).collect()
}

fn check_replay(base: &Document, outcome: &MergeOutcome) {
    let replayed = replay_ops(base, &outcome.applied).expect("applied edits replay");
    assert_eq!(replayed.to_canonical_json(), outcome.document.to_canonical_json());
}

#[test]
fn concurrent_list_edits_converge_in_either_order() {
    let (base, _) = figure2();
    for (x, y) in [("org1", "org2"), ("org2", "org1")] {
        let Logs { add_and_sort, tabulate, .. } = logs(x, y);
        let ab = merge(&base, &add_and_sort, &tabulate, &Policy::PreferA).unwrap();
        let ba = merge(&base, &tabulate, &add_and_sort, &Policy::PreferA).unwrap();
        assert!(ab.complete && ab.conflicts.is_empty(), "{:?}", ab.conflicts);
        assert_eq!(ab.document.to_canonical_json(), ba.document.to_canonical_json());
        check_replay(&base, &ab);
        let rows = fig5_rows(&ab.document);
        let ada = rows.iter().position(|r| r.starts_with("Ada Lovelace")).expect("new speaker row");
        assert_eq!(rows[ada], "Ada Lovelace | lovelace@rsoc.ac.uk | ");
        assert!(rows[ada + 1].starts_with("Adele") && rows[ada + 1].ends_with("| TP"), "{rows:?}");
    }
}

#[test]
fn count_formula_follows_the_refactoring() {
    let (base, _) = figure2();
    let Logs { add_sort_tabulate, budget, .. } = logs("org1", "org2");
    let out = merge(&base, &add_sort_tabulate, &budget, &Policy::PreferA).unwrap();
    assert!(out.conflicts.is_empty());
    let doc = recompute_all(&out.document);
    let formulas: Vec<String> =
        doc.nodes().filter_map(|n| n.formula.as_ref()).map(ToString::to_string).collect();
    assert!(formulas.contains(&"=COUNT(/table[id='speakers']/tbody/tr)".to_string()), "{formulas:?}");
    let values: Vec<Value> = doc.nodes().filter(|n| n.formula.is_some()).map(|n| eval_formula(&doc, &n.id).unwrap()).collect();
    assert!(values.contains(&Value::Number(4.0)) && values.contains(&Value::Number(4800.0)), "{values:?}");
    assert!(!out.dirty.is_empty());
    check_replay(&base, &out);
}

fn set_text_logs(base: &Document, target: &NodeId, a: &str, b: &str) -> (EditLog, EditLog) {
    let session = |replica: &str, text: &str| {
        let mut editor = Editor::new(base.clone(), ReplicaId::new(replica).unwrap());
        editor.set_text(target, text).unwrap();
        editor.into_parts().1
    };
    (session("org1", a), session("org2", b))
}

use crate::edit::Editor;

#[test]
fn concurrent_set_value_asks_and_respects_choice() {
    let (base, ids) = figure2();
    let target = &ids.speaker_items[0];
    let (a, b) = set_text_logs(&base, target, "first", "second");
    let text = |o: &MergeOutcome| o.document.find(target).unwrap().flat_text();

    let prefer_a = merge(&base, &a, &b, &Policy::PreferA).unwrap();
    assert_eq!(prefer_a.conflicts.len(), 1);
    assert_eq!(prefer_a.conflicts[0].kind, ConflictKind::ConcurrentSetValue);
    assert_eq!(text(&prefer_a), "first");
    let prefer_b = merge(&base, &b, &a, &Policy::PreferB).unwrap();
    assert_eq!(text(&prefer_b), "second");
    assert_eq!(prefer_a.conflicts[0].conflict_id, prefer_b.conflicts[0].conflict_id);

    let custom = merge(&base, &a, &b, &|_: &Conflict| Choice::Custom(serde_json::json!("both"))).unwrap();
    assert_eq!(text(&custom), "both");
    check_replay(&base, &custom);

    let bad = merge(&base, &a, &b, &|_: &Conflict| Choice::Custom(serde_json::json!(3)));
    assert!(matches!(bad, Err(MergeError::InvalidChoice { .. })));
}

#[test]
fn interactive_merge_takes_b_or_stops() {
    let (base, ids) = figure2();
    let target = &ids.speaker_items[1];
    let (a, b) = set_text_logs(&base, target, "first", "second");
    let mut asked = 0;
    let out = merge_interactive(&base, &a, &b, &mut |_: &Conflict| {
        asked += 1;
        Some(Choice::TakeB)
    })
    .unwrap();
    assert_eq!(asked, 1);
    assert!(out.complete);
    assert_eq!(out.document.find(target).unwrap().flat_text(), "second");

    let closed = merge_interactive(&base, &a, &b, &mut |_: &Conflict| None).unwrap();
    assert!(!closed.complete);
    assert!(closed.pending().is_some());
}

#[test]
fn empty_logs_merge_to_the_other_side() {
    let (base, _) = figure2();
    let Logs { tabulate, .. } = logs("org1", "org2");
    let empty = EditLog::new(VersionHash::of(&base), ReplicaId::new("org1").unwrap());
    let out = merge(&base, &empty, &tabulate, &Policy::PreferA).unwrap();
    let expected = replay_ops(&base, &tabulate.ops().cloned().collect::<Vec<_>>()).unwrap();
    assert_eq!(out.document.to_canonical_json(), expected.to_canonical_json());
}

#[test]
fn rejects_mismatched_logs() {
    let (base, ids) = figure2();
    let (a, _) = set_text_logs(&base, &ids.speaker_items[0], "x", "y");
    assert!(matches!(merge(&base, &a, &a, &Policy::PreferA), Err(MergeError::SameReplica(_))));
    let other = apply(&base, &PrimitiveEdit::RemoveNode { target: ids.speaker_items[0].clone() }.into()).unwrap();
    let (_, b) = set_text_logs(&other, &ids.speaker_items[1], "x", "y");
    assert!(matches!(merge(&base, &a, &b, &Policy::PreferA), Err(MergeError::VersionMismatch { .. })));
}

#[test]
fn remove_vs_edit_can_restore() {
    let (base, ids) = figure2();
    let target = ids.speaker_items[2].clone();
    let mut remover = Editor::new(base.clone(), ReplicaId::new("org1").unwrap());
    remover.remove(&target).unwrap();
    let mut editor = Editor::new(base.clone(), ReplicaId::new("org2").unwrap());
    editor.set_text(&target, "renamed").unwrap();
    let (a, b) = (remover.into_parts().1, editor.into_parts().1);

    let kept_removed = merge(&base, &a, &b, &Policy::PreferA).unwrap();
    assert_eq!(kept_removed.conflicts[0].kind, ConflictKind::RemoveVsEdit);
    assert!(!kept_removed.document.contains(&target));
    let restored = merge(&base, &a, &b, &Policy::PreferB).unwrap();
    assert_eq!(restored.document.find(&target).unwrap().flat_text(), "renamed");
    check_replay(&base, &restored);
}

#[test]
fn transform_rebases_a_single_edit() {
    let (base, ids) = figure2();
    let org1 = ReplicaId::new("org1").unwrap();
    let org2 = ReplicaId::new("org2").unwrap();
    let refactor = scenario::refactor_op(&base, &ids.speakers, "org1");
    let insert: EditOp = PrimitiveEdit::InsertNode {
        parent: ids.speakers.clone(),
        position: 3,
        node: crate::edit::NodeSpec::text(crate::model::NodeKind::ListItem, scenario::NEW_SPEAKER),
        id: NodeId::new(org2.clone(), 1),
    }
    .into();
    let t = transform(&base, &insert, &org2, std::slice::from_ref(&refactor), &org1).unwrap();
    assert!(t.conflicts.is_empty());
    let after = apply(&apply(&base, &refactor).unwrap(), &t.ops[0]).unwrap();
    assert!(after.render().contains("Ada Lovelace | lovelace@rsoc.ac.uk"));
}
