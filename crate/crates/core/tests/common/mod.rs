//! Seeded random documents, edit sessions and selectors.
#![allow(dead_code)]

use blockmerge::edit::{EditLog, Editor, NodeSpec, SortKey};
use blockmerge::model::{Document, Node, NodeId, NodeKind, ReplicaId};
use blockmerge::selector::Selector;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn replica(name: &str) -> ReplicaId {
    ReplicaId::new(name).unwrap()
}

const FIRST: [&str; 8] = ["Ada", "Adele", "Betty", "Grace", "Margaret", "Radia", "Barbara", "Frances"];
const LAST: [&str; 6] = ["Lovelace", "Goldberg", "Hopper", "Hamilton", "Perlman", "Liskov"];
const LIST_IDS: [&str; 3] = ["speakers", "hosts", "extra"];
const FORMULAS: [&str; 8] = [
    "=COUNT(/ul[id='speakers']/li)",
    "=COUNT(/ul/li)",
    "=/dl/dd[0] * /dl/dd[1]",
    "=SUM(/dl/dd)",
    "=COUNT(/table/tbody/tr) + 1",
    "=SUM(/ul[id='hosts']/li) - /dl/dd[0]",
    "=COUNT(/ul[0]/li[1]|/dl/dt)",
    "=/dl/dd[2] / 2",
];

pub fn speaker(rng: &mut impl Rng) -> String {
    let first = FIRST.choose(rng).unwrap();
    let last = LAST.choose(rng).unwrap();
    format!("{first} {last}, {}@example.org", last.to_lowercase())
}

fn number(rng: &mut impl Rng) -> String {
    let n: u32 = rng.random_range(0..50);
    if rng.random_bool(0.2) {
        format!("${n}00")
    } else {
        n.to_string()
    }
}

/// A document with lists, possibly a table, a definition list holding
/// numbers and computed values, and some prose.
pub fn document(rng: &mut impl Rng) -> Document {
    let mut editor = Editor::new(Document::new("base").unwrap(), replica("base"));
    let root = editor.doc().root().id.clone();
    editor.append(&root, NodeSpec::text(NodeKind::Heading, "Programming conference")).unwrap();
    for (i, uid) in LIST_IDS.iter().enumerate().take(rng.random_range(1..=3)) {
        let mut spec = NodeSpec::new(NodeKind::List);
        if i == 0 || rng.random_bool(0.5) {
            spec = spec.with_user_id(*uid);
        }
        let list = editor.append(&root, spec).unwrap();
        for _ in 0..rng.random_range(0..5) {
            let text = if rng.random_bool(0.8) { speaker(rng) } else { number(rng) };
            editor.append(&list, NodeSpec::text(NodeKind::ListItem, text)).unwrap();
        }
        if rng.random_bool(0.25) {
            let _ = editor.refactor_list_to_table(&list, ",", &["Name", "Email"], "");
        }
    }
    if rng.random_bool(0.5) {
        editor.append(&root, NodeSpec::text(NodeKind::Paragraph, "Notes")).unwrap();
    }
    let dl = editor.append(&root, NodeSpec::new(NodeKind::DefList)).unwrap();
    for i in 0..rng.random_range(1..5) {
        editor.append(&dl, NodeSpec::text(NodeKind::DefTerm, format!("Item {i}"))).unwrap();
        if rng.random_bool(0.6) {
            editor.append(&dl, NodeSpec::text(NodeKind::DefValue, number(rng))).unwrap();
        } else {
            let dd = editor.append(&dl, NodeSpec::new(NodeKind::DefValue)).unwrap();
            editor.append(&dd, NodeSpec::computed(*FORMULAS.choose(rng).unwrap())).unwrap();
        }
    }
    editor.into_parts().0
}

fn pick<'d>(rng: &mut impl Rng, doc: &'d Document, filter: impl Fn(&Node) -> bool) -> Option<&'d Node> {
    let nodes: Vec<&Node> = doc.nodes().filter(|n| filter(n)).collect();
    nodes.choose(rng).copied()
}

fn holds_text(kind: NodeKind) -> bool {
    matches!(
        kind,
        NodeKind::Heading
            | NodeKind::Paragraph
            | NodeKind::ListItem
            | NodeKind::TableRow
            | NodeKind::TableCell
            | NodeKind::DefTerm
            | NodeKind::DefValue
    )
}

/// Performs one random edit through `editor`. Returns false if the chosen
/// edit was rejected (nothing is logged then).
pub fn random_edit(rng: &mut impl Rng, editor: &mut Editor) -> bool {
    let doc = editor.doc().clone();
    let root = doc.root().id.clone();
    let id_of = |n: Option<&Node>| n.map(|n| n.id.clone());
    let result = match rng.random_range(0..13) {
        0 | 1 => {
            let Some(list) = id_of(pick(rng, &doc, |n| n.kind == NodeKind::List)) else { return false };
            let len = doc.find(&list).unwrap().children.len();
            let at = rng.random_range(0..=len);
            editor.insert(&list, at, NodeSpec::text(NodeKind::ListItem, speaker(rng))).map(drop)
        }
        2 => {
            let at = rng.random_range(0..=doc.root().children.len());
            editor.insert(&root, at, NodeSpec::text(NodeKind::Paragraph, "More notes")).map(drop)
        }
        3 => {
            let Some(dl) = id_of(pick(rng, &doc, |n| n.kind == NodeKind::DefList)) else { return false };
            let len = doc.find(&dl).unwrap().children.len();
            let at = rng.random_range(0..=len);
            let spec = if rng.random_bool(0.5) {
                NodeSpec::text(NodeKind::DefValue, number(rng))
            } else {
                NodeSpec::text(NodeKind::DefTerm, "Term")
            };
            editor.insert(&dl, at, spec).map(drop)
        }
        4 => {
            let Some(target) = id_of(pick(rng, &doc, |n| n.id != root)) else { return false };
            editor.remove(&target)
        }
        5 | 6 => {
            let Some(target) = id_of(pick(rng, &doc, |n| holds_text(n.kind) && n.children.is_empty())) else {
                return false;
            };
            let text = if rng.random_bool(0.5) { speaker(rng) } else { number(rng) };
            editor.set_text(&target, &text)
        }
        7 => {
            let Some(target) = id_of(pick(rng, &doc, |n| n.kind == NodeKind::Computed)) else { return false };
            editor.set_formula(&target, FORMULAS.choose(rng).unwrap())
        }
        8 => {
            let Some(list) = id_of(pick(rng, &doc, |n| matches!(n.kind, NodeKind::List | NodeKind::TableBody))) else {
                return false;
            };
            let key = if rng.random_bool(0.7) { SortKey::FIRST_WORD } else { "full-text desc".parse().unwrap() };
            editor.sort(&list, key)
        }
        9 => {
            let Some(list) = id_of(pick(rng, &doc, |n| n.kind == NodeKind::List)) else { return false };
            let headers: &[&str] =
                if rng.random_bool(0.5) { &["Name", "Email", "Organizer"] } else { &["Name", "Email"] };
            editor.refactor_list_to_table(&list, ",", headers, if rng.random_bool(0.5) { "" } else { "TBD" })
        }
        10 => {
            let Some(table) = id_of(pick(rng, &doc, |n| n.kind == NodeKind::Table)) else { return false };
            let header = ["Organizer", "Status", "Notes"].choose(rng).unwrap();
            editor.add_column(&table, header, "")
        }
        11 => {
            let Some(target) = id_of(pick(rng, &doc, |n| n.kind.is_selectable() && n.id != root)) else {
                return false;
            };
            let uid = if rng.random_bool(0.3) { None } else { LIST_IDS.choose(rng).copied() };
            editor.set_user_id(&target, uid)
        }
        _ => {
            let Some(target) = id_of(pick(rng, &doc, |n| n.kind == NodeKind::ListItem && n.text.is_some())) else {
                return false;
            };
            editor.change_kind(&target, NodeKind::Paragraph).or_else(|_| editor.remove(&target))
        }
    };
    result.is_ok()
}

/// A log of up to `max` random edits against `base`.
pub fn session(rng: &mut impl Rng, base: &Document, name: &str, max: usize) -> EditLog {
    let mut editor = Editor::new(base.clone(), replica(name));
    let n = rng.random_range(0..=max);
    let mut attempts = 0;
    while editor.log().entries.len() < n && attempts < 4 * max + 4 {
        random_edit(rng, &mut editor);
        attempts += 1;
    }
    editor.into_parts().1
}

/// A selector built from the shape of `doc`: paths towards real nodes with
/// a random mix of predicates, occasionally a union.
pub fn selector(rng: &mut impl Rng, doc: &Document) -> Selector {
    let mut parts = Vec::new();
    for _ in 0..if rng.random_bool(0.2) { 2 } else { 1 } {
        let Some(target) = pick(rng, doc, |n| n.id != doc.root().id && n.kind.is_selectable()) else { break };
        let mut chain = doc.ancestors(&target.id).unwrap();
        chain.push(target);
        let mut path = String::new();
        for (parent, node) in chain.iter().zip(chain.iter().skip(1)) {
            path.push('/');
            path.push_str(node.kind.tag());
            match rng.random_range(0..3) {
                0 => {}
                1 => {
                    let index = parent.children.iter().filter(|c| c.kind == node.kind).position(|c| c.id == node.id);
                    path.push_str(&format!("[{}]", index.unwrap()));
                }
                _ => {
                    if let Some(uid) = &node.user_id {
                        path.push_str(&format!("[id='{uid}']"));
                    }
                }
            }
        }
        parts.push(path);
    }
    if parts.is_empty() {
        return Selector::parse("/p").unwrap();
    }
    Selector::parse(&parts.join("|")).unwrap()
}

pub fn ids_of(nodes: impl IntoIterator<Item = NodeId>) -> std::collections::BTreeSet<NodeId> {
    nodes.into_iter().collect()
}

use std::collections::BTreeSet;

use blockmerge::edit::{apply_primitive, apply_traced};
use blockmerge::formula::{dirty_set, evaluate_all};
use blockmerge::merge::{merge, Conflict, MergeOutcome, Policy};
use blockmerge::selector::rewrite_selector_between;
use blockmerge::store::replay_ops;

pub type Check = Result<(), String>;

fn conflict_set(outcome: &MergeOutcome) -> BTreeSet<String> {
    outcome.conflicts.iter().map(|c: &Conflict| serde_json::to_string(c).unwrap()).collect()
}

/// Merging in both argument orders gives structurally equal documents and
/// the same conflicts.
pub fn check_commutative(seed: u64) -> Check {
    let mut rng = rng(seed);
    let base = document(&mut rng);
    let a = session(&mut rng, &base, "r1", 6);
    let b = session(&mut rng, &base, "r2", 6);
    let ab = merge(&base, &a, &b, &Policy::PreferA).map_err(|e| format!("seed {seed}: {e}"))?;
    let ba = merge(&base, &b, &a, &Policy::PreferA).map_err(|e| format!("seed {seed}: {e}"))?;
    if !ab.document.structurally_equal(&ba.document) {
        return Err(format!("seed {seed}: documents differ\n{}\n--\n{}", ab.document.render(), ba.document.render()));
    }
    if conflict_set(&ab) != conflict_set(&ba) {
        return Err(format!("seed {seed}: conflict sets differ"));
    }
    Ok(())
}

/// Any pair of applicable logs merges under either policy into a valid
/// document that replaying the applied edits reproduces.
pub fn check_merge_total(seed: u64) -> Check {
    let mut rng = rng(seed);
    let base = document(&mut rng);
    let a = session(&mut rng, &base, "alice", 10);
    let b = session(&mut rng, &base, "bob", 10);
    let policy = if rng.random_bool(0.5) { Policy::PreferA } else { Policy::PreferB };
    let out = merge(&base, &a, &b, &policy).map_err(|e| format!("seed {seed}: merge failed: {e}"))?;
    if !out.complete || out.pending().is_some() {
        return Err(format!("seed {seed}: unresolved conflict"));
    }
    out.document.validate().map_err(|e| format!("seed {seed}: invalid result: {e}"))?;
    let replayed = replay_ops(&base, &out.applied).map_err(|e| format!("seed {seed}: replay failed: {e}"))?;
    if replayed.to_canonical_json() != out.document.to_canonical_json() {
        return Err(format!("seed {seed}: replaying the applied edits diverges"));
    }
    Ok(())
}

/// A selector rewritten through an edit denotes exactly the surviving nodes
/// it denoted before, ignoring nodes the edit created.
pub fn check_rewrite(seed: u64) -> Check {
    let mut rng = rng(seed);
    let base = document(&mut rng);
    let mut editor = Editor::new(base.clone(), replica("e"));
    for _ in 0..20 {
        if random_edit(&mut rng, &mut editor) {
            break;
        }
    }
    let Some(entry) = editor.log().entries.last() else { return Ok(()) };
    let steps = entry.op.primitives();
    let step = rng.random_range(0..steps.len());
    let mut before = base;
    for p in &steps[..step] {
        before = apply_primitive(&before, p).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    let edit = &steps[step];
    let after = apply_primitive(&before, edit).map_err(|e| format!("seed {seed}: {e}"))?;
    let sel = selector(&mut rng, &before);
    let rewritten = rewrite_selector_between(&sel, edit, &before, &after).selector;
    let created: BTreeSet<NodeId> = edit.created().into_iter().collect();
    let image: BTreeSet<NodeId> = sel.resolve(&before).into_iter().filter(|id| after.contains(id)).collect();
    let got: BTreeSet<NodeId> = rewritten.resolve(&after).into_iter().filter(|id| !created.contains(id)).collect();
    if image != got {
        return Err(format!("seed {seed}: {sel} -> {rewritten} through {}: {image:?} vs {got:?}", edit.name()));
    }
    Ok(())
}

/// Every computed value whose result changes under an edit is in the dirty
/// set.
pub fn check_dirty(seed: u64) -> Check {
    let mut rng = rng(seed);
    let base = document(&mut rng);
    let mut editor = Editor::new(base.clone(), replica("e"));
    for _ in 0..20 {
        if random_edit(&mut rng, &mut editor) {
            break;
        }
    }
    let Some(entry) = editor.log().entries.last() else { return Ok(()) };
    let op = &entry.op;
    let (after, _) = apply_traced(&base, op).map_err(|e| format!("seed {seed}: {e}"))?;
    let dirty = dirty_set(&base, op).map_err(|e| format!("seed {seed}: {e}"))?;
    let old = evaluate_all(&base);
    for (id, value) in evaluate_all(&after) {
        if old.get(&id) != Some(&value) && !dirty.contains(&id) {
            return Err(format!("seed {seed}: {id} changed under {} but is not dirty", op.name()));
        }
    }
    Ok(())
}
