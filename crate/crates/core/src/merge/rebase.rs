use std::collections::{BTreeMap, HashMap, HashSet};

use serde_json::{json, Value as Json};

use super::{Choice, Conflict, ConflictKind, ConflictOption, MergeError, MergeOutcome};
use crate::edit::{
    apply_primitive, apply_traced, expand_refactor_list_to_table, split_first, table_rows, Composite, CompositeEdit,
    DerivedIds, EditLog, EditOp, IdSource, NodeSpec, PrimitiveEdit, SortKey,
};
use crate::formula::{dirty_between, Formula};
use crate::model::{Document, Node, NodeId, NodeKind, ReplicaId};
use crate::selector::rewrite_selector_between;
use crate::store::{ReplayError, VersionHash};

type Ask<'a> = dyn FnMut(&Conflict) -> Option<Choice> + 'a;

pub(super) fn run(base: &Document, a: &EditLog, b: &EditLog, ask: &mut Ask<'_>) -> Result<MergeOutcome, MergeError> {
    let version = VersionHash::of(base);
    for log in [a, b] {
        if log.base_version != version {
            return Err(MergeError::VersionMismatch {
                replica: log.replica.clone(),
                log: log.base_version.clone(),
                base: version,
            });
        }
    }
    if a.replica == b.replica {
        return Err(MergeError::SameReplica(a.replica.clone()));
    }
    let (first, second) = if a.replica < b.replica { (a, b) } else { (b, a) };
    run_ordered(base, first, second, ask)
}

/// Applies `first` as recorded, then rebases `second` across it.
pub(super) fn run_ordered(
    base: &Document,
    first: &EditLog,
    second: &EditLog,
    ask: &mut Ask<'_>,
) -> Result<MergeOutcome, MergeError> {
    let summary = Summary::record(base, first)?;
    let replay_err = |source| MergeError::Replay { replica: second.replica.clone(), source };
    let mut s_views = Vec::with_capacity(second.entries.len());
    let mut view = base.clone();
    for (index, op) in second.ops().enumerate() {
        let next = crate::edit::apply(&view, op)
            .map_err(|rejection| replay_err(ReplayError::Rejected { index, rejection }))?;
        s_views.push(std::mem::replace(&mut view, next));
    }

    let mut m = Merger {
        base,
        f: &summary,
        f_replica: &first.replica,
        s_replica: &second.replica,
        cur: summary.doc.clone(),
        applied: first.ops().cloned().collect(),
        conflicts: Vec::new(),
        touched: summary.touched.clone(),
        s_touched: HashSet::new(),
        s_sorted: HashSet::new(),
        s_dropped: HashSet::new(),
        alias: HashMap::new(),
    };
    for (op, view) in second.ops().zip(&s_views) {
        let steps: Vec<PrimitiveEdit> = op.primitives().iter().map(|p| m.aliased(p)).collect();
        if matches!(op, EditOp::Composite(CompositeEdit { composite: Composite::RefactorListToTable { .. }, .. })) {
            let outcome = m.rebase_refactor(op, view);
            if !m.complete_step(outcome, ask)? {
                return Ok(m.finish(false));
            }
        } else {
            // Each primitive is rebased against the view just before it.
            let mut local = view.clone();
            for (raw, p) in op.primitives().iter().zip(&steps) {
                let p = m.aliased(p);
                let outcome = m.rebase(&p, &local);
                if !m.complete_step(outcome, ask)? {
                    return Ok(m.finish(false));
                }
                m.note_dropped(&p);
                local = apply_primitive(&local, raw).unwrap_or(local);
            }
        }
        for p in &steps {
            m.note_dropped(p);
        }
    }
    m.fill_columns();
    m.resort();
    Ok(m.finish(true))
}

#[derive(Clone, Debug)]
struct RefactorInfo {
    separator: String,
}

/// What the first log did, as far as rebasing needs to know.
struct Summary {
    doc: Document,
    /// Each primitive with the documents before and after it.
    steps: Vec<(PrimitiveEdit, Document, Document)>,
    touched: HashSet<NodeId>,
    removed: HashSet<NodeId>,
    /// Nodes changed by anything other than a removal.
    edited: HashSet<NodeId>,
    set_values: HashMap<NodeId, String>,
    set_formulas: HashSet<NodeId>,
    set_user_ids: HashMap<NodeId, Option<String>>,
    splits: HashMap<NodeId, String>,
    sorts: Vec<(NodeId, SortKey)>,
    refactored: HashMap<NodeId, RefactorInfo>,
    /// Header and default of each added column, by table.
    columns: HashMap<NodeId, Vec<(String, String)>>,
}

impl Summary {
    fn record(base: &Document, log: &EditLog) -> Result<Summary, MergeError> {
        let mut s = Summary {
            doc: base.clone(),
            steps: Vec::new(),
            touched: HashSet::new(),
            removed: HashSet::new(),
            edited: HashSet::new(),
            set_values: HashMap::new(),
            set_formulas: HashSet::new(),
            set_user_ids: HashMap::new(),
            splits: HashMap::new(),
            sorts: Vec::new(),
            refactored: HashMap::new(),
            columns: HashMap::new(),
        };
        for (index, op) in log.ops().enumerate() {
            let fail = |rejection| MergeError::Replay {
                replica: log.replica.clone(),
                source: ReplayError::Rejected { index, rejection },
            };
            if let EditOp::Composite(CompositeEdit { composite: Composite::RefactorListToTable { list, separator, .. }, .. }) = op {
                s.refactored.insert(list.clone(), RefactorInfo { separator: separator.clone() });
            }
            let mut doc = s.doc.clone();
            for p in op.primitives() {
                let touched = p.touched(&doc);
                let next = apply_primitive(&doc, p).map_err(fail)?;
                s.note(p, &doc, &touched);
                s.touched.extend(touched);
                s.steps.push((p.clone(), doc, next.clone()));
                doc = next;
            }
            doc.validate().map_err(|v| fail(v.into()))?;
            s.doc = doc;
        }
        Ok(s)
    }

    fn note(&mut self, p: &PrimitiveEdit, before: &Document, touched: &HashSet<NodeId>) {
        if let PrimitiveEdit::RemoveNode { target } = p {
            if let Some(node) = before.find(target) {
                self.removed.extend(node.descendants().map(|n| n.id.clone()));
            }
            return;
        }
        self.edited.extend(touched.iter().cloned());
        match p {
            PrimitiveEdit::SetValue { target, new_text, .. } => {
                self.set_values.insert(target.clone(), new_text.clone());
            }
            PrimitiveEdit::SetFormula { target, .. } => {
                self.set_formulas.insert(target.clone());
            }
            PrimitiveEdit::SetUserId { target, new_user_id, .. } => {
                self.set_user_ids.insert(target.clone(), new_user_id.clone());
            }
            PrimitiveEdit::SplitValue { target, separator, .. } => {
                self.splits.insert(target.clone(), separator.clone());
            }
            PrimitiveEdit::SortChildren { target, key, .. } => {
                self.sorts.retain(|(t, _)| t != target);
                self.sorts.push((target.clone(), *key));
            }
            PrimitiveEdit::AddColumn { table, header, default, .. } => {
                self.columns.entry(table.clone()).or_default().push((header.clone(), default.clone()));
            }
            _ => {}
        }
    }

    fn sort_key(&self, container: &NodeId) -> Option<SortKey> {
        self.sorts.iter().find(|(t, _)| t == container).map(|(_, k)| *k)
    }

    fn column_default(&self, table: &NodeId, header: &str) -> String {
        self.columns
            .get(table)
            .and_then(|cols| cols.iter().rev().find(|(h, _)| h == header))
            .map(|(_, d)| d.clone())
            .unwrap_or_default()
    }
}

/// One side of a conflict before it is ordered by replica.
struct Side {
    description: String,
    payload: Json,
    ops: Vec<EditOp>,
}

impl Side {
    fn drop(description: impl Into<String>) -> Side {
        Side { description: description.into(), payload: Json::Array(Vec::new()), ops: Vec::new() }
    }

    fn ops(description: impl Into<String>, ops: Vec<EditOp>) -> Side {
        let payload = serde_json::to_value(&ops).expect("edits serialize");
        Side { description: description.into(), payload, ops }
    }

    fn value(description: impl Into<String>, value: Json, ops: Vec<EditOp>) -> Side {
        Side { description: description.into(), payload: value, ops }
    }
}

type Custom = Box<dyn Fn(&Json) -> Option<Vec<EditOp>>>;

struct Draft {
    kind: ConflictKind,
    site: NodeId,
    f: Side,
    s: Side,
    /// Turns a custom payload into edits; by default the payload must be a
    /// list of edits.
    custom: Option<Custom>,
}

enum Outcome {
    Apply(Vec<EditOp>),
    Conflict(Draft),
    Skip,
}

struct Merger<'a> {
    base: &'a Document,
    f: &'a Summary,
    f_replica: &'a ReplicaId,
    s_replica: &'a ReplicaId,
    cur: Document,
    applied: Vec<EditOp>,
    conflicts: Vec<Conflict>,
    touched: HashSet<NodeId>,
    s_touched: HashSet<NodeId>,
    /// Containers whose order the second log's sort decided.
    s_sorted: HashSet<NodeId>,
    /// Ids the second log created in edits that were dropped.
    s_dropped: HashSet<NodeId>,
    /// Ids of the second log that denote nodes the first log created for the
    /// same purpose.
    alias: HashMap<NodeId, NodeId>,
}

fn transformed(origin: &str, expansion: Vec<PrimitiveEdit>) -> EditOp {
    match <[PrimitiveEdit; 1]>::try_from(expansion) {
        Ok([single]) => EditOp::Primitive(single),
        Err(expansion) => EditOp::Composite(CompositeEdit {
            composite: Composite::Transformed { origin: origin.to_string() },
            expansion,
        }),
    }
}

fn map_ids(p: &PrimitiveEdit, f: &impl Fn(&NodeId) -> NodeId) -> PrimitiveEdit {
    let mut p = p.clone();
    match &mut p {
        PrimitiveEdit::InsertNode { parent, id, .. } => {
            *parent = f(parent);
            *id = f(id);
        }
        PrimitiveEdit::RemoveNode { target }
        | PrimitiveEdit::SetValue { target, .. }
        | PrimitiveEdit::SetFormula { target, .. }
        | PrimitiveEdit::ChangeNodeKind { target, .. }
        | PrimitiveEdit::SetUserId { target, .. } => *target = f(target),
        PrimitiveEdit::WrapChildren { target, wrapper_id, .. } => {
            *target = f(target);
            *wrapper_id = f(wrapper_id);
        }
        PrimitiveEdit::SplitValue { target, cell_ids, .. } => {
            *target = f(target);
            cell_ids.iter_mut().for_each(|c| *c = f(c));
        }
        PrimitiveEdit::SortChildren { target, permutation, .. } => {
            *target = f(target);
            permutation.iter_mut().for_each(|c| *c = f(c));
        }
        PrimitiveEdit::AddColumn { table, cell_ids, .. } => {
            *table = f(table);
            *cell_ids = cell_ids.iter().map(|(r, c)| (f(r), f(c))).collect();
        }
    }
    p
}

/// Container whose children a sort of `id` reorders: a table's rows live in
/// its body.
fn sort_container(doc: &Document, id: &NodeId) -> NodeId {
    match doc.find(id) {
        Some(node) if node.kind == NodeKind::Table => node
            .children
            .iter()
            .find(|c| c.kind == NodeKind::TableBody)
            .map_or_else(|| id.clone(), |b| b.id.clone()),
        _ => id.clone(),
    }
}

fn header_row(table: &Node) -> Option<&Node> {
    table.children.iter().find(|c| c.kind == NodeKind::TableRow)
}

impl Merger<'_> {
    fn finish(self, complete: bool) -> MergeOutcome {
        let dirty = dirty_between(self.base, &self.cur, &self.touched);
        MergeOutcome { document: self.cur, applied: self.applied, conflicts: self.conflicts, dirty, complete }
    }

    fn aliased(&self, p: &PrimitiveEdit) -> PrimitiveEdit {
        map_ids(p, &|id| self.alias.get(id).cloned().unwrap_or_else(|| id.clone()))
    }

    fn note_dropped(&mut self, p: &PrimitiveEdit) {
        for id in p.created() {
            if !self.cur.contains(&id) {
                self.s_dropped.insert(id);
            }
        }
    }

    /// Applies an outcome, asking about conflicts. False if the prompt closed.
    fn complete_step(&mut self, outcome: Outcome, ask: &mut Ask<'_>) -> Result<bool, MergeError> {
        match outcome {
            Outcome::Skip => Ok(true),
            Outcome::Apply(ops) => {
                self.apply_all(ops);
                Ok(true)
            }
            Outcome::Conflict(draft) => {
                let (f_opt, s_opt) = (self.option(self.f_replica, &draft.f), self.option(self.s_replica, &draft.s));
                let mut conflict = Conflict::new(draft.kind, draft.site.clone(), f_opt, s_opt);
                let Some(choice) = ask(&conflict) else {
                    self.conflicts.push(conflict);
                    return Ok(false);
                };
                let f_is_a = self.f_replica < self.s_replica;
                let ops = match &choice {
                    Choice::TakeA if f_is_a => draft.f.ops,
                    Choice::TakeB if !f_is_a => draft.f.ops,
                    Choice::TakeA | Choice::TakeB => draft.s.ops,
                    Choice::Custom(payload) => {
                        let parsed = match &draft.custom {
                            Some(custom) => custom(payload),
                            None => serde_json::from_value::<Vec<EditOp>>(payload.clone()).ok(),
                        };
                        parsed.ok_or_else(|| MergeError::InvalidChoice {
                            conflict: conflict.conflict_id.clone(),
                            reason: format!("payload {payload} does not fit a {} conflict", draft.kind),
                        })?
                    }
                };
                conflict.resolution = Some(choice);
                self.conflicts.push(conflict);
                self.apply_all(ops);
                Ok(true)
            }
        }
    }

    fn option(&self, replica: &ReplicaId, side: &Side) -> ConflictOption {
        ConflictOption { replica: replica.clone(), description: side.description.clone(), payload: side.payload.clone() }
    }

    fn apply_all(&mut self, ops: Vec<EditOp>) {
        for op in ops {
            match apply_traced(&self.cur, &op) {
                Ok((doc, touched)) => {
                    for p in op.primitives() {
                        if let PrimitiveEdit::SortChildren { target, .. } = p {
                            self.s_sorted.insert(target.clone());
                        }
                    }
                    self.cur = doc;
                    self.s_touched.extend(touched.iter().cloned());
                    self.touched.extend(touched);
                    self.applied.push(op);
                }
                Err(rejection) => {
                    let site = op.primitives().first().map_or_else(|| self.cur.root().id.clone(), |p| p.site().clone());
                    let keep = Side::drop("keep the merged document as it is");
                    let payload = serde_json::to_value(&op).expect("edits serialize");
                    let lost = Side::value(format!("{} no longer applies: {rejection}", op.name()), payload, Vec::new());
                    let mut conflict = Conflict::new(
                        ConflictKind::EditInapplicable,
                        site,
                        self.option(self.f_replica, &keep),
                        self.option(self.s_replica, &lost),
                    );
                    conflict.resolution =
                        Some(if self.f_replica < self.s_replica { Choice::TakeA } else { Choice::TakeB });
                    self.conflicts.push(conflict);
                }
            }
        }
    }

    fn is_dropped(&self, id: &NodeId) -> bool {
        self.s_dropped.contains(id)
    }

    fn rebase(&mut self, p: &PrimitiveEdit, view: &Document) -> Outcome {
        if self.is_dropped(p.site()) {
            return Outcome::Skip;
        }
        if !self.cur.contains(p.site()) {
            return self.site_removed(p, view);
        }
        match p {
            PrimitiveEdit::InsertNode { parent, position, node, id } => self.insert(parent, *position, node, id, view),
            PrimitiveEdit::RemoveNode { target } => self.remove(target),
            PrimitiveEdit::SetValue { target, new_text, .. } => self.set_value(target, new_text),
            PrimitiveEdit::SetFormula { target, new_source, .. } => self.set_formula(target, new_source),
            PrimitiveEdit::ChangeNodeKind { target, to, .. } if self.cur.find(target).expect("present").kind == *to => {
                Outcome::Skip
            }
            PrimitiveEdit::SplitValue { target, cell_ids, .. } if self.f.splits.contains_key(target) => {
                self.alias_cells(target, cell_ids);
                Outcome::Skip
            }
            PrimitiveEdit::SortChildren { target, key, .. } => self.sort(target, *key),
            PrimitiveEdit::AddColumn { table, header, default, cell_ids } => {
                self.add_column(table, header, default, cell_ids)
            }
            PrimitiveEdit::SetUserId { target, new_user_id, .. } => self.set_user_id(target, new_user_id.as_deref()),
            _ => Outcome::Apply(vec![p.clone().into()]),
        }
    }

    /// The first log removed the node the edit is addressed to.
    fn site_removed(&mut self, p: &PrimitiveEdit, view: &Document) -> Outcome {
        let site = p.site().clone();
        if matches!(p, PrimitiveEdit::RemoveNode { .. }) {
            return Outcome::Skip;
        }
        if !self.f.removed.contains(&site) {
            // Neither side has the node any more: an edit of ours was dropped.
            self.s_dropped.insert(site);
            return Outcome::Skip;
        }
        let Some(restore) = self.restore(&site, view) else {
            return Outcome::Apply(vec![p.clone().into()]);
        };
        let restored = match apply_traced(&self.cur, &restore) {
            Ok((doc, _)) => doc,
            Err(_) => return Outcome::Apply(vec![restore]),
        };
        let saved = std::mem::replace(&mut self.cur, restored);
        let then = self.rebase(p, view);
        self.cur = saved;
        let mut ops = vec![restore];
        match then {
            Outcome::Apply(more) => ops.extend(more),
            Outcome::Conflict(draft) => ops.extend(draft.s.ops),
            Outcome::Skip => {}
        }
        Outcome::Conflict(Draft {
            kind: ConflictKind::RemoveVsEdit,
            site: site.clone(),
            f: Side::drop(format!("keep {site} removed")),
            s: Side::ops(format!("restore {site} and {}", p.name()), ops),
            custom: None,
        })
    }

    /// Re-inserts the removed subtree containing `id`, as the second log saw
    /// it.
    fn restore(&self, id: &NodeId, view: &Document) -> Option<EditOp> {
        let mut chain = view.ancestors(id)?;
        chain.push(view.find(id)?);
        let top = chain.iter().position(|n| !self.cur.contains(&n.id))?;
        let parent = chain.get(top.checked_sub(1)?)?;
        let node = chain[top];
        let position = self.anchor(&parent.id, &parent.id, view.index_in_parent(&node.id)?, view);
        let mut edits = Vec::new();
        fn walk(node: &Node, parent: &NodeId, position: usize, edits: &mut Vec<PrimitiveEdit>) {
            edits.push(PrimitiveEdit::InsertNode {
                parent: parent.clone(),
                position,
                node: NodeSpec::of(node),
                id: node.id.clone(),
            });
            for (i, child) in node.children.iter().enumerate() {
                walk(child, &node.id, i, edits);
            }
        }
        walk(node, &parent.id, position, &mut edits);
        Some(transformed("restore", edits))
    }

    /// Position in `parent` (of the merged document) just after the nearest
    /// left sibling that `position` in `view_parent` had in the second log's
    /// view.
    fn anchor(&self, parent: &NodeId, view_parent: &NodeId, position: usize, view: &Document) -> usize {
        let Some(siblings) = view.find(view_parent).map(|p| &p.children) else { return 0 };
        let Some(current) = self.cur.find(parent) else { return 0 };
        for sibling in siblings[..position.min(siblings.len())].iter().rev() {
            if let Some(i) = current.children.iter().position(|c| c.id == sibling.id) {
                return i + 1;
            }
        }
        0
    }

    fn rewrite_formula(&self, source: &str) -> String {
        let Ok(mut formula) = Formula::parse(source) else { return source.to_string() };
        for (p, before, after) in &self.f.steps {
            formula = formula.map_selectors(&mut |sel| rewrite_selector_between(sel, p, before, after).selector);
        }
        formula.to_string()
    }

    fn insert(&mut self, parent: &NodeId, position: usize, spec: &NodeSpec, id: &NodeId, view: &Document) -> Outcome {
        let container = self.cur.find(parent).expect("present");
        if spec.kind == NodeKind::ListItem && container.kind == NodeKind::Table {
            if let Some(info) = self.f.refactored.get(parent) {
                return self.insert_row(parent, position, spec, id, view, &info.separator.clone());
            }
        }
        let position = self.anchor(parent, parent, position, view);
        let mut spec = spec.clone();
        if let Some(source) = &spec.formula {
            spec.formula = Some(self.rewrite_formula(source));
        }
        let insert = |spec: NodeSpec| -> EditOp {
            PrimitiveEdit::InsertNode { parent: parent.clone(), position, node: spec, id: id.clone() }.into()
        };
        if let Some(holder) = spec.user_id.as_deref().and_then(|u| self.cur.find_by_user_id(u)) {
            let uid = spec.user_id.clone().expect("checked");
            let holder = holder.id.clone();
            let unnamed = NodeSpec { user_id: None, ..spec.clone() };
            let release = PrimitiveEdit::SetUserId { target: holder.clone(), new_user_id: None, old_user_id: Some(uid.clone()) };
            return Outcome::Conflict(Draft {
                kind: ConflictKind::FormulaRewriteAmbiguous,
                site: holder.clone(),
                f: Side::ops(format!("{holder} keeps id '{uid}'"), vec![insert(unnamed)]),
                s: Side::ops(format!("the inserted {id} takes id '{uid}'"), vec![release.into(), insert(spec)]),
                custom: None,
            });
        }
        Outcome::Apply(vec![insert(spec)])
    }

    /// A list item inserted into a list the first log turned into a table
    /// becomes a row formatted like its siblings.
    fn insert_row(
        &mut self,
        table: &NodeId,
        position: usize,
        spec: &NodeSpec,
        id: &NodeId,
        view: &Document,
        separator: &str,
    ) -> Outcome {
        let node = self.cur.find(table).expect("present");
        let Some(body) = node.children.iter().find(|c| c.kind == NodeKind::TableBody) else {
            return Outcome::Apply(vec![PrimitiveEdit::InsertNode {
                parent: table.clone(),
                position,
                node: spec.clone(),
                id: id.clone(),
            }
            .into()]);
        };
        let headers: Vec<String> =
            header_row(node).map(|h| h.children.iter().map(Node::flat_text).collect()).unwrap_or_default();
        let body_id = body.id.clone();
        let position = self.anchor(&body_id, table, position, view);
        let mut row = NodeSpec::text(NodeKind::TableRow, spec.text.clone().unwrap_or_default());
        row.user_id = spec.user_id.clone();
        let mut ids = DerivedIds;
        let mut edits = vec![
            PrimitiveEdit::InsertNode { parent: body_id, position, node: row, id: id.clone() },
            PrimitiveEdit::SplitValue {
                target: id.clone(),
                separator: separator.to_string(),
                cell_kind: NodeKind::TableCell,
                cell_ids: ids.split_cells(id).to_vec(),
            },
        ];
        for (column, header) in headers.iter().enumerate().skip(2) {
            edits.push(PrimitiveEdit::InsertNode {
                parent: id.clone(),
                position: column,
                node: NodeSpec::text(NodeKind::TableCell, self.f.column_default(table, header)),
                id: ids.column_cell(id, column, header),
            });
        }
        Outcome::Apply(vec![transformed("insert-row", edits)])
    }

    fn remove(&mut self, target: &NodeId) -> Outcome {
        let remove: EditOp = PrimitiveEdit::RemoveNode { target: target.clone() }.into();
        let node = self.cur.find(target).expect("present");
        let edited = node.descendants().any(|n| self.f.edited.contains(&n.id));
        if !edited {
            return Outcome::Apply(vec![remove]);
        }
        Outcome::Conflict(Draft {
            kind: ConflictKind::RemoveVsEdit,
            site: target.clone(),
            f: Side::drop(format!("keep the edited {target}")),
            s: Side::ops(format!("remove {target}"), vec![remove]),
            custom: None,
        })
    }

    fn set_value(&mut self, target: &NodeId, text: &str) -> Outcome {
        let node = self.cur.find(target).expect("present");
        let resplit = self.f.splits.get(target).filter(|_| node.children.len() >= 2).cloned();
        let cells: Vec<(NodeId, String)> = node.children.iter().map(|c| (c.id.clone(), c.flat_text())).collect();
        let old_text = node.text.clone();
        let edits_for = {
            let target = target.clone();
            let resplit = resplit.clone();
            let cells = cells.clone();
            move |text: &str| -> Vec<EditOp> {
                match &resplit {
                    Some(separator) => {
                        let (a, b) = split_first(text, separator);
                        let edits = [a, b]
                            .into_iter()
                            .zip(&cells)
                            .map(|(t, (cell, old))| PrimitiveEdit::SetValue {
                                target: cell.clone(),
                                new_text: t,
                                old_text: Some(old.clone()),
                            })
                            .collect();
                        vec![transformed("re-split", edits)]
                    }
                    None => vec![PrimitiveEdit::SetValue {
                        target: target.clone(),
                        new_text: text.to_string(),
                        old_text: old_text.clone(),
                    }
                    .into()],
                }
            }
        };
        let ours = edits_for(text);
        let custom: Custom = {
            let edits_for = edits_for.clone();
            Box::new(move |payload: &Json| payload.as_str().map(&edits_for))
        };
        if let Some(theirs) = self.f.set_values.get(target) {
            if theirs == text {
                return Outcome::Skip;
            }
            return Outcome::Conflict(Draft {
                kind: ConflictKind::ConcurrentSetValue,
                site: target.clone(),
                f: Side::value(format!("keep {theirs:?}"), json!(theirs), Vec::new()),
                s: Side::value(format!("set to {text:?}"), json!(text), ours),
                custom: Some(custom),
            });
        }
        if let Some(separator) = &resplit {
            let (a, b) = split_first(text, separator);
            let clash = [a, b].iter().zip(&cells).any(|(new, (cell, current))| {
                self.f.set_values.contains_key(cell) && new != current
            });
            if clash {
                let current: Vec<&str> = cells.iter().map(|(_, t)| t.as_str()).collect();
                return Outcome::Conflict(Draft {
                    kind: ConflictKind::SplitVsSetValue,
                    site: target.clone(),
                    f: Side::value(format!("keep the edited cells {current:?}"), json!(current), Vec::new()),
                    s: Side::value(format!("re-split {text:?}"), json!(text), ours),
                    custom: Some(custom),
                });
            }
        }
        Outcome::Apply(ours)
    }

    fn set_formula(&mut self, target: &NodeId, source: &str) -> Outcome {
        let source = self.rewrite_formula(source);
        let current = self.cur.find(target).expect("present").formula.as_ref().map(ToString::to_string);
        let edit = |new_source: String| -> EditOp {
            PrimitiveEdit::SetFormula {
                target: target.clone(),
                new_source,
                old_source: current.clone().unwrap_or_default(),
            }
            .into()
        };
        if current.as_deref() == Some(source.as_str()) {
            return Outcome::Skip;
        }
        if self.f.set_formulas.contains(target) {
            let theirs = current.clone().unwrap_or_default();
            let custom_target = target.clone();
            let old = theirs.clone();
            return Outcome::Conflict(Draft {
                kind: ConflictKind::ConcurrentSetValue,
                site: target.clone(),
                f: Side::value(format!("keep {theirs}"), json!(theirs), Vec::new()),
                s: Side::value(format!("set to {source}"), json!(source), vec![edit(source.clone())]),
                custom: Some(Box::new(move |payload: &Json| {
                    let src = payload.as_str()?;
                    Some(vec![PrimitiveEdit::SetFormula {
                        target: custom_target.clone(),
                        new_source: src.to_string(),
                        old_source: old.clone(),
                    }
                    .into()])
                })),
            });
        }
        Outcome::Apply(vec![edit(source)])
    }

    fn sort(&mut self, target: &NodeId, key: SortKey) -> Outcome {
        let container = sort_container(&self.cur, target);
        let node = self.cur.find(&container).expect("present");
        let sort: EditOp =
            PrimitiveEdit::SortChildren { target: container.clone(), key, permutation: key.order(node) }.into();
        match self.f.sort_key(target).or_else(|| self.f.sort_key(&container)) {
            Some(theirs) if theirs != key => Outcome::Conflict(Draft {
                kind: ConflictKind::SortVsSort,
                site: container.clone(),
                f: Side::drop(format!("keep the order by {theirs}")),
                s: Side::ops(format!("sort by {key}"), vec![sort]),
                custom: None,
            }),
            _ => Outcome::Apply(vec![sort]),
        }
    }

    fn add_column(&mut self, table: &NodeId, header: &str, default: &str, cell_ids: &BTreeMap<NodeId, NodeId>) -> Outcome {
        let node = self.cur.find(table).expect("present");
        if node.kind == NodeKind::Table {
            if let Some(column) = header_row(node).and_then(|h| h.children.iter().position(|c| c.flat_text() == header)) {
                let existing: Vec<(NodeId, NodeId)> = table_rows(node)
                    .iter()
                    .filter_map(|r| Some((r.id.clone(), r.children.get(column)?.id.clone())))
                    .collect();
                for (row, cell) in existing {
                    if let Some(ours) = cell_ids.get(&row) {
                        self.alias.insert(ours.clone(), cell);
                    }
                }
                return Outcome::Skip;
            }
        }
        let column = node.children.first().map_or(0, |_| table_rows(node).first().map_or(0, |r| r.children.len()));
        let mut ids = DerivedIds;
        let cells = table_rows(node)
            .iter()
            .map(|r| {
                let cell = cell_ids.get(&r.id).cloned().unwrap_or_else(|| ids.column_cell(&r.id, column, header));
                (r.id.clone(), cell)
            })
            .collect();
        Outcome::Apply(vec![PrimitiveEdit::AddColumn {
            table: table.clone(),
            header: header.to_string(),
            default: default.to_string(),
            cell_ids: cells,
        }
        .into()])
    }

    fn set_user_id(&mut self, target: &NodeId, user_id: Option<&str>) -> Outcome {
        let current = self.cur.find(target).expect("present").user_id.clone();
        if current.as_deref() == user_id {
            return Outcome::Skip;
        }
        let set = |u: Option<String>| -> EditOp {
            PrimitiveEdit::SetUserId { target: target.clone(), new_user_id: u, old_user_id: current.clone() }.into()
        };
        let ours = vec![set(user_id.map(String::from))];
        if self.f.set_user_ids.contains_key(target) {
            let custom_set = {
                let target = target.clone();
                let current = current.clone();
                move |payload: &Json| -> Option<Vec<EditOp>> {
                    let new = match payload {
                        Json::Null => None,
                        Json::String(s) => Some(s.clone()),
                        _ => return None,
                    };
                    Some(vec![PrimitiveEdit::SetUserId { target: target.clone(), new_user_id: new, old_user_id: current.clone() }.into()])
                }
            };
            return Outcome::Conflict(Draft {
                kind: ConflictKind::ConcurrentSetValue,
                site: target.clone(),
                f: Side::value(format!("keep id {current:?}"), json!(current), Vec::new()),
                s: Side::value(format!("set id to {user_id:?}"), json!(user_id), ours),
                custom: Some(Box::new(custom_set)),
            });
        }
        if let Some(holder) = user_id.and_then(|u| self.cur.find_by_user_id(u)) {
            let holder = holder.id.clone();
            let uid = user_id.expect("checked").to_string();
            let release = PrimitiveEdit::SetUserId { target: holder.clone(), new_user_id: None, old_user_id: Some(uid.clone()) };
            return Outcome::Conflict(Draft {
                kind: ConflictKind::FormulaRewriteAmbiguous,
                site: holder.clone(),
                f: Side::drop(format!("{holder} keeps id '{uid}'")),
                s: Side::ops(format!("{target} takes id '{uid}'"), vec![release.into(), set(Some(uid))]),
                custom: None,
            });
        }
        Outcome::Apply(ours)
    }

    /// Points the given split cell ids at the cells the first log created by
    /// splitting the same node.
    fn alias_cells(&mut self, row: &NodeId, cell_ids: &[NodeId]) {
        let Some(node) = self.cur.find(row) else { return };
        let existing: Vec<NodeId> = node.children.iter().map(|c| c.id.clone()).collect();
        for (ours, theirs) in cell_ids.iter().zip(existing) {
            if ours != &theirs {
                self.alias.insert(ours.clone(), theirs);
            }
        }
    }

    fn rebase_refactor(&mut self, op: &EditOp, view: &Document) -> Outcome {
        let EditOp::Composite(CompositeEdit {
            composite: Composite::RefactorListToTable { list, separator, headers, default },
            expansion,
        }) = op
        else {
            unreachable!("called for refactorings only")
        };
        let list = self.alias.get(list).cloned().unwrap_or_else(|| list.clone());
        if self.is_dropped(&list) {
            return Outcome::Skip;
        }
        if self.f.refactored.contains_key(&list) && self.cur.contains(&list) {
            self.alias_refactoring(&list, expansion);
            let added: Vec<EditOp> = headers
                .iter()
                .skip(2)
                .filter(|h| {
                    let table = self.cur.find(&list).expect("present");
                    !header_row(table).is_some_and(|r| r.children.iter().any(|c| &c.flat_text() == *h))
                })
                .map(|h| {
                    let table = self.cur.find(&list).expect("present");
                    let column = header_row(table).map_or(2, |r| r.children.len());
                    let mut ids = DerivedIds;
                    let cell_ids = table_rows(table)
                        .iter()
                        .map(|r| (r.id.clone(), ids.column_cell(&r.id, column, h)))
                        .collect();
                    PrimitiveEdit::AddColumn { table: list.clone(), header: h.clone(), default: default.clone(), cell_ids }
                        .into()
                })
                .collect();
            return if added.is_empty() { Outcome::Skip } else { Outcome::Apply(added) };
        }
        if !self.cur.contains(&list) {
            let first = expansion.first().cloned().unwrap_or(PrimitiveEdit::RemoveNode { target: list.clone() });
            return self.site_removed(&first, view);
        }
        let mut hints = Hints::from_expansion(expansion);
        match expand_refactor_list_to_table(&self.cur, &list, separator, headers, default, &mut hints) {
            Ok(composite) => Outcome::Apply(vec![EditOp::Composite(composite)]),
            Err(_) => Outcome::Apply(vec![op.clone()]),
        }
    }

    /// Both logs refactored the same list: the second log's ids for the
    /// table parts denote the first log's nodes.
    fn alias_refactoring(&mut self, list: &NodeId, expansion: &[PrimitiveEdit]) {
        let table = self.cur.find(list).expect("present").clone();
        let body = table.children.iter().find(|c| c.kind == NodeKind::TableBody);
        let header = header_row(&table);
        for p in expansion {
            match p {
                PrimitiveEdit::WrapChildren { wrapper_id, .. } => {
                    if let Some(body) = body {
                        self.alias.insert(wrapper_id.clone(), body.id.clone());
                    }
                }
                PrimitiveEdit::InsertNode { parent, position, id, .. } => {
                    let theirs = if parent == list {
                        header.map(|h| h.id.clone())
                    } else {
                        header.and_then(|h| h.children.get(*position)).map(|c| c.id.clone())
                    };
                    if let Some(theirs) = theirs {
                        self.alias.insert(id.clone(), theirs);
                    }
                }
                PrimitiveEdit::SplitValue { target, cell_ids, .. } => self.alias_cells(target, cell_ids),
                PrimitiveEdit::AddColumn { header: name, cell_ids, .. } => {
                    let column = header.and_then(|h| h.children.iter().position(|c| &c.flat_text() == name));
                    let Some(column) = column else { continue };
                    for (row, cell) in cell_ids {
                        let row = self.alias.get(row).cloned().unwrap_or_else(|| row.clone());
                        if let Some(theirs) = table.find(&row).and_then(|r| r.children.get(column)) {
                            self.alias.insert(cell.clone(), theirs.id.clone());
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// New rows in tables the first log added columns to get default cells.
    fn fill_columns(&mut self) {
        let mut edits = Vec::new();
        let mut tables: Vec<&NodeId> = self.f.columns.keys().collect();
        tables.sort();
        for table_id in tables {
            let Some(table) = self.cur.find(table_id).filter(|t| t.kind == NodeKind::Table) else { continue };
            let Some(header) = header_row(table) else { continue };
            let headers: Vec<String> = header.children.iter().map(Node::flat_text).collect();
            for row in table_rows(table) {
                if row.text.is_some() || row.children.len() >= headers.len() || !self.s_touched.contains(&row.id) {
                    continue;
                }
                let mut ids = DerivedIds;
                for (column, name) in headers.iter().enumerate().skip(row.children.len()) {
                    edits.push(PrimitiveEdit::InsertNode {
                        parent: row.id.clone(),
                        position: column,
                        node: NodeSpec::text(NodeKind::TableCell, self.f.column_default(table_id, name)),
                        id: ids.column_cell(&row.id, column, name),
                    });
                }
            }
        }
        if !edits.is_empty() {
            self.apply_all(vec![transformed("fill-columns", edits)]);
        }
    }

    /// Containers the first log sorted stay sorted by the same key when the
    /// second log changed their content, unless it sorted them itself.
    fn resort(&mut self) {
        let mut ops = Vec::new();
        for (target, key) in &self.f.sorts {
            let container = sort_container(&self.cur, target);
            if self.s_sorted.contains(&container) {
                continue;
            }
            let Some(node) = self.cur.find(&container) else { continue };
            if !node.descendants().any(|n| self.s_touched.contains(&n.id)) {
                continue;
            }
            let order = key.order(node);
            if order.iter().ne(node.children.iter().map(|c| &c.id)) {
                ops.push(PrimitiveEdit::SortChildren { target: container, key: *key, permutation: order }.into());
            }
        }
        self.apply_all(ops);
    }
}

/// Ids from the second log's own expansion of a refactoring, reused when
/// the refactoring is expanded again over the merged document.
#[derive(Default)]
struct Hints {
    wrapper: Option<NodeId>,
    header_row: Option<NodeId>,
    header_cells: Vec<NodeId>,
    splits: HashMap<NodeId, [NodeId; 2]>,
    columns: HashMap<(NodeId, String), NodeId>,
}

impl Hints {
    fn from_expansion(expansion: &[PrimitiveEdit]) -> Hints {
        let mut hints = Hints::default();
        for p in expansion {
            match p {
                PrimitiveEdit::WrapChildren { wrapper_id, .. } => hints.wrapper = Some(wrapper_id.clone()),
                PrimitiveEdit::InsertNode { id, .. } if hints.header_row.is_none() => hints.header_row = Some(id.clone()),
                PrimitiveEdit::InsertNode { id, .. } => hints.header_cells.push(id.clone()),
                PrimitiveEdit::SplitValue { target, cell_ids, .. } if cell_ids.len() == 2 => {
                    hints.splits.insert(target.clone(), [cell_ids[0].clone(), cell_ids[1].clone()]);
                }
                PrimitiveEdit::AddColumn { header, cell_ids, .. } => {
                    for (row, cell) in cell_ids {
                        hints.columns.insert((row.clone(), header.clone()), cell.clone());
                    }
                }
                _ => {}
            }
        }
        hints
    }
}

impl IdSource for Hints {
    fn wrapper(&mut self, list: &NodeId) -> NodeId {
        self.wrapper.clone().unwrap_or_else(|| DerivedIds.wrapper(list))
    }

    fn header_row(&mut self, list: &NodeId) -> NodeId {
        self.header_row.clone().unwrap_or_else(|| DerivedIds.header_row(list))
    }

    fn header_cell(&mut self, list: &NodeId, column: usize) -> NodeId {
        self.header_cells.get(column).cloned().unwrap_or_else(|| DerivedIds.header_cell(list, column))
    }

    fn split_cells(&mut self, row: &NodeId) -> [NodeId; 2] {
        self.splits.get(row).cloned().unwrap_or_else(|| DerivedIds.split_cells(row))
    }

    fn column_cell(&mut self, row: &NodeId, column: usize, header: &str) -> NodeId {
        let hinted = self.columns.get(&(row.clone(), header.to_string())).cloned();
        hinted.unwrap_or_else(|| DerivedIds.column_cell(row, column, header))
    }
}
