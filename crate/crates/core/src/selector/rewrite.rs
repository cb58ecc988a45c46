//! Rewriting selectors through structure edits so that a selector keeps
//! denoting the same nodes.
//!
//! Each path is first transformed by the rule for the edit (re-kinding a
//! step, inserting a wrapper step, shifting index predicates). The result is
//! checked against the concrete documents: it must resolve to the surviving
//! nodes the path denoted before, ignoring nodes the edit created, and to no
//! node outside what the whole selector denoted.
//! Paths that fail the check are replaced by concrete paths to those nodes.

use std::collections::HashSet;

use super::{kind_index, Path, Predicate, Selector, Step};
use crate::edit::{apply_shape, PrimitiveEdit};
use crate::model::{Document, Node, NodeId};

/// Outcome of rewriting one selector through one edit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rewrite {
    pub selector: Selector,
    /// False when some path had to be replaced by concrete node paths.
    pub structural: bool,
}

/// Rewrites `sel` through `edit` applied to `before`. A selector is returned
/// unchanged if the edit does not apply.
pub fn rewrite_selector(sel: &Selector, edit: &PrimitiveEdit, before: &Document) -> Selector {
    match apply_shape(before, edit) {
        Ok(after) => rewrite_selector_between(sel, edit, before, &after).selector,
        Err(_) => sel.clone(),
    }
}

/// Rewrites `sel` given both sides of `edit`.
pub fn rewrite_selector_between(sel: &Selector, edit: &PrimitiveEdit, before: &Document, after: &Document) -> Rewrite {
    let touched = touched_with_parents(edit, before);
    let created: HashSet<NodeId> = edit.created().into_iter().collect();
    // A path may also pick up nodes that a sibling path of the union
    // denoted, so candidates are checked against the union's targets too.
    let union: HashSet<NodeId> = sel.resolve(before).into_iter().filter(|id| after.contains(id)).collect();
    let ctx = Ctx { edit, before, after, created: &created, union: &union };
    let mut paths: Vec<Path> = Vec::new();
    let mut structural = true;
    for path in &sel.paths {
        if !on_resolution_path(path, before, &touched) {
            paths.push(path.clone());
            continue;
        }
        let (replacement, ok) = ctx.rewrite_path(path);
        structural &= ok;
        paths.extend(replacement);
    }
    let mut seen = HashSet::new();
    paths.retain(|p| seen.insert(p.clone()));
    Rewrite { selector: Selector { paths }, structural }
}

fn touched_with_parents(edit: &PrimitiveEdit, before: &Document) -> HashSet<NodeId> {
    let mut touched = edit.touched(before);
    if let Some(parent) = before.parent_of(edit.site()) {
        touched.insert(parent.id.clone());
    }
    touched
}

/// Whether any node the path visits or inspects is in `touched`.
fn on_resolution_path(path: &Path, doc: &Document, touched: &HashSet<NodeId>) -> bool {
    path.levels(doc)
        .iter()
        .any(|l| l.parents.iter().chain(&l.matched).any(|n| touched.contains(&n.id)))
}

struct Ctx<'a> {
    edit: &'a PrimitiveEdit,
    before: &'a Document,
    after: &'a Document,
    created: &'a HashSet<NodeId>,
    union: &'a HashSet<NodeId>,
}

impl Ctx<'_> {
    /// Returns the replacement paths and whether a structural rewrite held.
    fn rewrite_path(&self, path: &Path) -> (Vec<Path>, bool) {
        let target: HashSet<NodeId> = path
            .resolve(self.before)
            .into_iter()
            .filter(|n| self.after.contains(&n.id))
            .map(|n| n.id.clone())
            .collect();
        let candidates: Vec<Vec<Path>> = self.candidates(path).into_iter().chain([vec![path.clone()]]).collect();
        for candidate in candidates {
            let got = self.denoted(&candidate);
            if got.is_superset(&target) && got.is_subset(self.union) {
                return (candidate, true);
            }
        }
        (self.concrete(&target), false)
    }

    /// Pre-existing nodes the paths resolve to after the edit.
    fn denoted(&self, paths: &[Path]) -> HashSet<NodeId> {
        paths
            .iter()
            .flat_map(|p| p.resolve(self.after))
            .filter(|n| !self.created.contains(&n.id))
            .map(|n| n.id.clone())
            .collect()
    }

    fn candidates(&self, path: &Path) -> Vec<Vec<Path>> {
        let levels = path.levels(self.before);
        let Some(base) = self.reindex(path) else {
            return vec![Vec::new()];
        };
        let at = |n: &NodeId| levels.iter().position(|l| l.matched.iter().any(|m| &m.id == n));
        let only = |i: usize, n: &NodeId| levels[i].matched.iter().all(|m| &m.id == n);
        match self.edit {
            PrimitiveEdit::ChangeNodeKind { target, to, .. } => {
                let Some(i) = at(target) else { return vec![vec![base]] };
                let node = self.after.find(target).expect("rekinded node survives");
                let mut preds = vec![base.steps[i].pred.clone(), Predicate::None];
                if let Some(uid) = &node.user_id {
                    preds.push(Predicate::UserId(uid.clone()));
                }
                if let Some(idx) = self.after_index(target) {
                    preds.push(Predicate::Index(idx));
                }
                let mut out = Vec::new();
                for pred in preds {
                    let mut rekinded = base.clone();
                    rekinded.steps[i] = Step::new(*to, pred);
                    if only(i, target) {
                        out.push(vec![rekinded]);
                    } else {
                        out.push(vec![base.clone(), rekinded]);
                    }
                }
                out
            }
            PrimitiveEdit::WrapChildren { target, wrapper_kind, .. } => match at(target) {
                Some(i) if i + 1 < base.steps.len() => {
                    let mut wrapped = base.clone();
                    wrapped.steps.insert(i + 1, Step::new(*wrapper_kind, Predicate::None));
                    if only(i, target) {
                        vec![vec![wrapped]]
                    } else {
                        vec![vec![base, wrapped]]
                    }
                }
                _ => vec![vec![base]],
            },
            _ => vec![vec![base]],
        }
    }

    /// Shifts index predicates so each keeps matching the node it matched
    /// before the edit. `None` if an identifying step lost every node it
    /// matched.
    fn reindex(&self, path: &Path) -> Option<Path> {
        let levels = path.levels(self.before);
        let mut steps = path.steps.clone();
        for (step, level) in steps.iter_mut().zip(&levels) {
            if level.matched.is_empty() {
                continue;
            }
            let survivors: Vec<&Node> = level.matched.iter().filter(|m| self.after.contains(&m.id)).copied().collect();
            match step.pred {
                Predicate::None => {}
                _ if survivors.is_empty() => return None,
                Predicate::UserId(_) => {}
                Predicate::Index(j) => {
                    let mut indices = survivors.iter().filter_map(|m| self.after_index(&m.id));
                    if let Some(first) = indices.next() {
                        if indices.all(|k| k == first) {
                            step.pred = Predicate::Index(first);
                        }
                    } else {
                        step.pred = Predicate::Index(j);
                    }
                }
            }
        }
        Some(Path { steps })
    }

    fn after_index(&self, id: &NodeId) -> Option<usize> {
        kind_index(self.after.parent_of(id)?, id)
    }

    /// Concrete paths denoting exactly `target` in the post-edit document.
    /// Siblings are grouped under one step when they are all the non-created
    /// children of their kind.
    fn concrete(&self, target: &HashSet<NodeId>) -> Vec<Path> {
        let mut paths = Vec::new();
        let mut done: HashSet<&NodeId> = HashSet::new();
        for node in self.after.nodes() {
            if !target.contains(&node.id) || done.contains(&node.id) {
                continue;
            }
            let parent = self.after.parent_of(&node.id).expect("targets are never the root");
            let Some(prefix) = self.node_path(parent) else { continue };
            let same_kind: Vec<&Node> = parent
                .children
                .iter()
                .filter(|c| c.kind == node.kind && !self.created.contains(&c.id))
                .collect();
            if same_kind.len() > 1 && same_kind.iter().all(|c| target.contains(&c.id)) {
                done.extend(same_kind.iter().map(|c| &c.id));
                paths.push(extend(&prefix, Step::new(node.kind, Predicate::None)));
            } else {
                paths.push(extend(&prefix, self.unique_step(parent, node)));
            }
        }
        paths
    }

    fn node_path(&self, node: &Node) -> Option<Path> {
        let mut steps = Vec::new();
        let mut chain = self.after.ancestors(&node.id)?;
        chain.push(node);
        for (parent, child) in chain.iter().zip(chain.iter().skip(1)) {
            steps.push(self.unique_step(parent, child));
        }
        Some(Path { steps })
    }

    fn unique_step(&self, parent: &Node, node: &Node) -> Step {
        let pred = match &node.user_id {
            Some(uid) => Predicate::UserId(uid.clone()),
            None => Predicate::Index(kind_index(parent, &node.id).expect("child of parent")),
        };
        Step::new(node.kind, pred)
    }
}

fn extend(prefix: &Path, step: Step) -> Path {
    let mut steps = prefix.steps.clone();
    steps.push(step);
    Path { steps }
}
