//! Dependency tracking: which computed values an edit can affect, and
//! refreshing their cached values.

use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use super::eval::{value_chain, Evaluator};
use super::Formula;
use crate::edit::{apply_traced, EditOp, Rejection};
use crate::model::{Document, Node, NodeId, NodeKind};
use crate::selector::Selector;

/// Selectors a formula reads.
pub fn dependencies(formula: &Formula) -> BTreeSet<Selector> {
    formula.selectors()
}

/// Computed values whose result may differ after applying `op` to `doc`.
pub fn dirty_set(doc: &Document, op: &EditOp) -> Result<BTreeSet<NodeId>, Rejection> {
    let (after, touched) = apply_traced(doc, op)?;
    Ok(dirty_between(doc, &after, &touched))
}

/// Computed values of `after` whose result may differ from `before`, given
/// the nodes the edits in between touched. Always a superset of the values
/// that actually changed.
pub fn dirty_between(before: &Document, after: &Document, touched: &HashSet<NodeId>) -> BTreeSet<NodeId> {
    let computed: Vec<&Node> = after.nodes().filter(|n| n.kind == NodeKind::Computed).collect();
    let mut dirty = BTreeSet::new();
    for node in &computed {
        if directly_dirty(node, before, after, touched) {
            dirty.insert(node.id.clone());
        }
    }
    // Dependents of dirty values are dirty too.
    loop {
        let mut grew = false;
        for node in &computed {
            if dirty.contains(&node.id) {
                continue;
            }
            let formula = node.formula.as_ref().expect("computed nodes carry formulas");
            let reads_dirty = formula.selectors().iter().any(|sel| {
                chain_ids(after, sel).iter().any(|id| dirty.contains(id))
            });
            if reads_dirty {
                dirty.insert(node.id.clone());
                grew = true;
            }
        }
        if !grew {
            return dirty;
        }
    }
}

fn directly_dirty(node: &Node, before: &Document, after: &Document, touched: &HashSet<NodeId>) -> bool {
    let Some(old) = before.find(&node.id) else { return true };
    let (Some(old_formula), Some(new_formula)) = (&old.formula, &node.formula) else { return true };
    if old_formula != new_formula || touched.contains(&node.id) {
        return true;
    }
    new_formula.selectors().iter().any(|sel| {
        sel.resolve(before) != sel.resolve(after)
            || chain_ids(before, sel).iter().chain(&chain_ids(after, sel)).any(|id| touched.contains(id))
    })
}

/// Every node whose content evaluation of `sel` reads.
fn chain_ids(doc: &Document, sel: &Selector) -> Vec<NodeId> {
    let mut chain = Vec::new();
    for id in sel.resolve(doc) {
        if let Some(node) = doc.find(&id) {
            value_chain(node, &mut chain);
        }
    }
    chain.into_iter().map(|n| n.id.clone()).collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecomputeError {
    #[error("no node {0}")]
    NotFound(NodeId),
    #[error("node {0} is not a computed value")]
    NotComputed(NodeId),
}

/// Refreshes the cached values of `dirty`; other cached values are left as
/// they are.
pub fn recompute(doc: &Document, dirty: &BTreeSet<NodeId>) -> Result<Document, RecomputeError> {
    let mut values = Vec::with_capacity(dirty.len());
    {
        let mut evaluator = Evaluator::new(doc);
        for id in dirty {
            let node = doc.find(id).ok_or_else(|| RecomputeError::NotFound(id.clone()))?;
            if node.kind != NodeKind::Computed {
                return Err(RecomputeError::NotComputed(id.clone()));
            }
            values.push((id.clone(), evaluator.computed(node)));
        }
    }
    let mut out = doc.clone();
    for (id, value) in values {
        out.find_mut(&id).expect("checked").cached = Some(value);
    }
    Ok(out)
}

/// Refreshes the cached value of every computed node.
pub fn recompute_all(doc: &Document) -> Document {
    let all: BTreeSet<NodeId> = doc.nodes().filter(|n| n.kind == NodeKind::Computed).map(|n| n.id.clone()).collect();
    recompute(doc, &all).expect("ids come from the document")
}
