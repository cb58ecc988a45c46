//! The edit algebra: replayable primitive structure edits, composite
//! refactorings built from them, and their application semantics.

mod editor;
mod refactor;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::Formula;
use crate::model::{Document, InvariantViolation, Node, NodeId, NodeKind, ReplicaId};
use crate::selector::{self, Selector};
use crate::store::VersionHash;

pub use editor::Editor;
pub use refactor::{expand_refactor_list_to_table, Allocator, DerivedIds, IdSource};
pub(crate) use refactor::column_cell_ids;

/// Content of a node created by [`PrimitiveEdit::InsertNode`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeSpec {
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Formula source, present iff `kind` is computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula: Option<String>,
}

impl NodeSpec {
    pub fn new(kind: NodeKind) -> Self {
        NodeSpec { kind, user_id: None, text: None, formula: None }
    }

    pub fn text(kind: NodeKind, text: impl Into<String>) -> Self {
        NodeSpec { text: Some(text.into()), ..NodeSpec::new(kind) }
    }

    pub fn computed(source: impl Into<String>) -> Self {
        NodeSpec { formula: Some(source.into()), ..NodeSpec::new(NodeKind::Computed) }
    }

    pub fn with_user_id(mut self, user_id: impl Into<String>) -> Self {
        self.user_id = Some(user_id.into());
        self
    }

    /// The spec describing an existing node (children excluded).
    pub fn of(node: &Node) -> Self {
        NodeSpec {
            kind: node.kind,
            user_id: node.user_id.clone(),
            text: node.text.clone(),
            formula: node.formula.as_ref().map(ToString::to_string),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SortField {
    /// First whitespace-separated word of the node's text.
    FirstWord,
    FullText,
}

/// Declarative sort order. Comparison is case-insensitive and stable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SortKey {
    pub field: SortField,
    #[serde(default)]
    pub descending: bool,
}

impl SortKey {
    pub const FIRST_WORD: SortKey = SortKey { field: SortField::FirstWord, descending: false };

    fn key_of(&self, node: &Node) -> String {
        let text = node.flat_text().to_lowercase();
        match self.field {
            SortField::FirstWord => text.split_whitespace().next().unwrap_or("").to_string(),
            SortField::FullText => text,
        }
    }

    /// Child ids of `container` in the order this key puts them.
    pub fn order(&self, container: &Node) -> Vec<NodeId> {
        let mut keyed: Vec<(String, &NodeId)> =
            container.children.iter().map(|c| (self.key_of(c), &c.id)).collect();
        keyed.sort_by(|a, b| if self.descending { b.0.cmp(&a.0) } else { a.0.cmp(&b.0) });
        keyed.into_iter().map(|(_, id)| id.clone()).collect()
    }
}

impl fmt::Display for SortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let field = match self.field {
            SortField::FirstWord => "first-word",
            SortField::FullText => "full-text",
        };
        f.write_str(field)?;
        if self.descending {
            f.write_str(" desc")?;
        }
        Ok(())
    }
}

impl FromStr for SortKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut words = s.split_whitespace();
        let field = match words.next() {
            Some("first-word") => SortField::FirstWord,
            Some("full-text") => SortField::FullText,
            _ => return Err(format!("unknown sort key {s:?}")),
        };
        let descending = match words.next() {
            None | Some("asc") => false,
            Some("desc") => true,
            Some(other) => return Err(format!("unknown sort direction {other:?}")),
        };
        Ok(SortKey { field, descending })
    }
}

/// One primitive, replayable structure edit. Every edit that creates nodes
/// carries the ids it creates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", rename_all_fields = "camelCase")]
pub enum PrimitiveEdit {
    InsertNode { parent: NodeId, position: usize, node: NodeSpec, id: NodeId },
    RemoveNode { target: NodeId },
    SetValue { target: NodeId, new_text: String, #[serde(default)] old_text: Option<String> },
    SetFormula { target: NodeId, new_source: String, old_source: String },
    ChangeNodeKind { target: NodeId, from: NodeKind, to: NodeKind },
    WrapChildren { target: NodeId, wrapper_kind: NodeKind, wrapper_id: NodeId },
    SplitValue { target: NodeId, separator: String, cell_kind: NodeKind, cell_ids: Vec<NodeId> },
    SortChildren { target: NodeId, key: SortKey, permutation: Vec<NodeId> },
    AddColumn { table: NodeId, header: String, default: String, cell_ids: BTreeMap<NodeId, NodeId> },
    SetUserId {
        target: NodeId,
        #[serde(default)]
        new_user_id: Option<String>,
        #[serde(default)]
        old_user_id: Option<String>,
    },
}

impl PrimitiveEdit {
    pub fn name(&self) -> &'static str {
        match self {
            PrimitiveEdit::InsertNode { .. } => "insert-node",
            PrimitiveEdit::RemoveNode { .. } => "remove-node",
            PrimitiveEdit::SetValue { .. } => "set-value",
            PrimitiveEdit::SetFormula { .. } => "set-formula",
            PrimitiveEdit::ChangeNodeKind { .. } => "change-node-kind",
            PrimitiveEdit::WrapChildren { .. } => "wrap-children",
            PrimitiveEdit::SplitValue { .. } => "split-value",
            PrimitiveEdit::SortChildren { .. } => "sort-children",
            PrimitiveEdit::AddColumn { .. } => "add-column",
            PrimitiveEdit::SetUserId { .. } => "set-user-id",
        }
    }

    /// The node the edit is addressed to.
    pub fn site(&self) -> &NodeId {
        match self {
            PrimitiveEdit::InsertNode { parent, .. } => parent,
            PrimitiveEdit::RemoveNode { target }
            | PrimitiveEdit::SetValue { target, .. }
            | PrimitiveEdit::SetFormula { target, .. }
            | PrimitiveEdit::ChangeNodeKind { target, .. }
            | PrimitiveEdit::WrapChildren { target, .. }
            | PrimitiveEdit::SplitValue { target, .. }
            | PrimitiveEdit::SortChildren { target, .. }
            | PrimitiveEdit::SetUserId { target, .. } => target,
            PrimitiveEdit::AddColumn { table, .. } => table,
        }
    }

    /// Ids of the nodes this edit creates.
    pub fn created(&self) -> Vec<NodeId> {
        match self {
            PrimitiveEdit::InsertNode { id, .. } => vec![id.clone()],
            PrimitiveEdit::WrapChildren { wrapper_id, .. } => vec![wrapper_id.clone()],
            PrimitiveEdit::SplitValue { cell_ids, .. } => cell_ids.clone(),
            PrimitiveEdit::AddColumn { cell_ids, .. } => cell_ids.values().cloned().collect(),
            _ => Vec::new(),
        }
    }

    /// Nodes whose own content, children or identity the edit changes,
    /// evaluated against the pre-edit document.
    pub fn touched(&self, before: &Document) -> HashSet<NodeId> {
        let mut out: HashSet<NodeId> = self.created().into_iter().collect();
        out.insert(self.site().clone());
        match self {
            PrimitiveEdit::RemoveNode { target } => {
                if let Some(node) = before.find(target) {
                    out.extend(node.descendants().map(|n| n.id.clone()));
                }
                if let Some(parent) = before.parent_of(target) {
                    out.insert(parent.id.clone());
                }
            }
            PrimitiveEdit::WrapChildren { target, .. } => {
                if let Some(node) = before.find(target) {
                    out.extend(node.children.iter().map(|c| c.id.clone()));
                }
            }
            PrimitiveEdit::AddColumn { cell_ids, .. } => out.extend(cell_ids.keys().cloned()),
            _ => {}
        }
        out
    }
}

/// Named composite edits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", rename_all_fields = "camelCase")]
pub enum Composite {
    RefactorListToTable { list: NodeId, separator: String, headers: Vec<String>, default: String },
    /// The output of transforming one edit across a concurrent log.
    Transformed { origin: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeEdit {
    pub composite: Composite,
    pub expansion: Vec<PrimitiveEdit>,
}

/// One entry of an edit log: a primitive or a composite edit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EditOp {
    Primitive(PrimitiveEdit),
    Composite(CompositeEdit),
}

impl EditOp {
    pub fn primitives(&self) -> &[PrimitiveEdit] {
        match self {
            EditOp::Primitive(p) => std::slice::from_ref(p),
            EditOp::Composite(c) => &c.expansion,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EditOp::Primitive(p) => p.name(),
            EditOp::Composite(CompositeEdit { composite: Composite::RefactorListToTable { .. }, .. }) => {
                "refactor-list-to-table"
            }
            EditOp::Composite(CompositeEdit { composite: Composite::Transformed { .. }, .. }) => "transformed",
        }
    }
}

impl From<PrimitiveEdit> for EditOp {
    fn from(p: PrimitiveEdit) -> Self {
        EditOp::Primitive(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub ts: u64,
    pub op: EditOp,
}

/// The edits one replica made since a common base version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EditLog {
    pub base_version: VersionHash,
    pub replica: ReplicaId,
    pub entries: Vec<LogEntry>,
}

impl EditLog {
    pub fn new(base_version: VersionHash, replica: ReplicaId) -> Self {
        EditLog { base_version, replica, entries: Vec::new() }
    }

    pub fn ops(&self) -> impl Iterator<Item = &EditOp> {
        self.entries.iter().map(|e| &e.op)
    }
}

/// Why an edit cannot be applied.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Rejection {
    #[error("missing target {0}")]
    MissingTarget(NodeId),
    #[error("{child} may not appear under {parent}")]
    KindIllegal { parent: NodeKind, child: NodeKind },
    #[error("cannot split {0}: it has children")]
    SplitNonLeaf(NodeId),
    #[error("recorded permutation no longer matches the children of {0}")]
    StalePermutation(NodeId),
    #[error("node {id} has kind {actual}, expected {expected}")]
    WrongKind { id: NodeId, expected: String, actual: NodeKind },
    #[error("node id {0} is already in use")]
    DuplicateId(NodeId),
    #[error("user id {0:?} is already in use")]
    DuplicateUserId(String),
    #[error("invalid formula: {0}")]
    InvalidFormula(String),
    #[error("no cell id supplied for row {0}")]
    MissingCellId(NodeId),
    #[error("node {0} holds text and cannot take children")]
    TextLeaf(NodeId),
    #[error("node {0} has children and cannot hold text")]
    NotALeaf(NodeId),
    #[error("position {position} out of range for {parent}")]
    InvalidPosition { parent: NodeId, position: usize },
    #[error("malformed edit: {0}")]
    Malformed(String),
    #[error("resulting document is invalid: {0}")]
    Invariant(#[from] InvariantViolation),
}

impl Rejection {
    /// Machine-readable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::MissingTarget(_) => "missing-target",
            Rejection::KindIllegal { .. } => "kind-illegal",
            Rejection::SplitNonLeaf(_) => "split-non-leaf",
            Rejection::StalePermutation(_) => "stale-permutation",
            Rejection::WrongKind { .. } => "wrong-kind",
            Rejection::DuplicateId(_) => "duplicate-id",
            Rejection::DuplicateUserId(_) => "duplicate-user-id",
            Rejection::InvalidFormula(_) => "invalid-formula",
            Rejection::MissingCellId(_) => "missing-cell-id",
            Rejection::TextLeaf(_) => "text-leaf",
            Rejection::NotALeaf(_) => "not-a-leaf",
            Rejection::InvalidPosition { .. } => "invalid-position",
            Rejection::Malformed(_) => "malformed",
            Rejection::Invariant(_) => "invariant",
        }
    }
}

/// Splits on the first occurrence of `separator` into two trimmed parts.
/// Text without the separator fills the first part and leaves the second empty.
pub fn split_first(text: &str, separator: &str) -> (String, String) {
    match text.split_once(separator) {
        Some((a, b)) => (a.trim().to_string(), b.trim().to_string()),
        None => (text.trim().to_string(), String::new()),
    }
}

fn holds_text(kind: NodeKind) -> bool {
    use NodeKind::*;
    matches!(kind, Heading | Paragraph | ListItem | TableRow | TableCell | DefTerm | DefValue)
}

fn require<'d>(doc: &'d Document, id: &NodeId) -> Result<&'d Node, Rejection> {
    doc.find(id).ok_or_else(|| Rejection::MissingTarget(id.clone()))
}

fn require_kind(node: &Node, expected: NodeKind) -> Result<(), Rejection> {
    if node.kind != expected {
        return Err(Rejection::WrongKind { id: node.id.clone(), expected: expected.tag().into(), actual: node.kind });
    }
    Ok(())
}

fn require_fresh(doc: &Document, id: &NodeId) -> Result<(), Rejection> {
    if doc.contains(id) {
        return Err(Rejection::DuplicateId(id.clone()));
    }
    Ok(())
}

fn require_child_legal(parent: NodeKind, child: NodeKind) -> Result<(), Rejection> {
    if !parent.allows_child(child) {
        return Err(Rejection::KindIllegal { parent, child });
    }
    Ok(())
}

/// Rows a column spans: header rows directly under the table, then body rows.
pub(crate) fn table_rows(table: &Node) -> Vec<&Node> {
    let mut rows = Vec::new();
    for child in &table.children {
        match child.kind {
            NodeKind::TableRow => rows.push(child),
            NodeKind::TableBody => rows.extend(child.children.iter().filter(|r| r.kind == NodeKind::TableRow)),
            _ => {}
        }
    }
    rows
}

/// Applies only the structural effect of `edit`. Checks are local to the
/// edit (the target exists, created nodes are legal under their parent);
/// whole-document legality is checked per [`EditOp`] by [`apply`].
pub fn apply_shape(doc: &Document, edit: &PrimitiveEdit) -> Result<Document, Rejection> {
    let mut out = doc.clone();
    match edit {
        PrimitiveEdit::InsertNode { parent, position, node: spec, id } => {
            let p = require(doc, parent)?;
            require_fresh(doc, id)?;
            if spec.kind == NodeKind::Document {
                return Err(Rejection::KindIllegal { parent: p.kind, child: spec.kind });
            }
            require_child_legal(p.kind, spec.kind)?;
            if p.text.is_some() {
                return Err(Rejection::TextLeaf(parent.clone()));
            }
            if *position > p.children.len() {
                return Err(Rejection::InvalidPosition { parent: parent.clone(), position: *position });
            }
            if let Some(uid) = &spec.user_id {
                if doc.find_by_user_id(uid).is_some() {
                    return Err(Rejection::DuplicateUserId(uid.clone()));
                }
            }
            let mut node = Node::new(id.clone(), spec.kind);
            node.user_id = spec.user_id.clone();
            match (spec.kind, &spec.formula) {
                (NodeKind::Computed, Some(src)) => {
                    node.formula = Some(Formula::parse(src).map_err(|e| Rejection::InvalidFormula(e.to_string()))?);
                }
                (NodeKind::Computed, None) => return Err(Rejection::InvalidFormula("missing formula".into())),
                (_, Some(_)) => return Err(Rejection::Malformed("formula on a non-computed node".into())),
                (_, None) => {}
            }
            if let Some(text) = &spec.text {
                if !holds_text(spec.kind) {
                    return Err(Rejection::Malformed(format!("{} nodes hold no text", spec.kind)));
                }
                node.text = Some(text.clone());
            }
            out.find_mut(parent).expect("checked").children.insert(*position, node);
            out.note_id(id);
        }
        PrimitiveEdit::RemoveNode { target } => {
            require(doc, target)?;
            let parent = out.root_mut().parent_of_mut(target).ok_or_else(|| {
                Rejection::WrongKind { id: target.clone(), expected: "non-root".into(), actual: NodeKind::Document }
            })?;
            parent.children.retain(|c| &c.id != target);
        }
        PrimitiveEdit::SetValue { target, new_text, .. } => {
            let node = require(doc, target)?;
            if !node.children.is_empty() {
                return Err(Rejection::NotALeaf(target.clone()));
            }
            if !holds_text(node.kind) {
                return Err(Rejection::WrongKind { id: target.clone(), expected: "text node".into(), actual: node.kind });
            }
            out.find_mut(target).expect("checked").text = Some(new_text.clone());
        }
        PrimitiveEdit::SetFormula { target, new_source, .. } => {
            let node = require(doc, target)?;
            require_kind(node, NodeKind::Computed)?;
            let formula = Formula::parse(new_source).map_err(|e| Rejection::InvalidFormula(e.to_string()))?;
            let node = out.find_mut(target).expect("checked");
            node.formula = Some(formula);
            node.cached = None;
        }
        PrimitiveEdit::ChangeNodeKind { target, from, to } => {
            let node = require(doc, target)?;
            require_kind(node, *from)?;
            if !from.is_selectable() || !to.is_selectable() || from == to {
                return Err(Rejection::Malformed(format!("cannot change {from} into {to}")));
            }
            let parent = doc.parent_of(target).map(|p| p.kind).unwrap_or(NodeKind::Document);
            require_child_legal(parent, *to)?;
            if node.text.is_some() && !holds_text(*to) {
                return Err(Rejection::Malformed(format!("{to} nodes hold no text")));
            }
            out.find_mut(target).expect("checked").kind = *to;
        }
        PrimitiveEdit::WrapChildren { target, wrapper_kind, wrapper_id } => {
            let node = require(doc, target)?;
            require_fresh(doc, wrapper_id)?;
            if !wrapper_kind.is_selectable() {
                return Err(Rejection::KindIllegal { parent: node.kind, child: *wrapper_kind });
            }
            require_child_legal(node.kind, *wrapper_kind)?;
            if node.text.is_some() {
                return Err(Rejection::TextLeaf(target.clone()));
            }
            let node = out.find_mut(target).expect("checked");
            let children = std::mem::take(&mut node.children);
            node.children.push(Node::new(wrapper_id.clone(), *wrapper_kind).with_children(children));
            out.note_id(wrapper_id);
        }
        PrimitiveEdit::SplitValue { target, separator, cell_kind, cell_ids } => {
            let node = require(doc, target)?;
            if !node.children.is_empty() {
                return Err(Rejection::SplitNonLeaf(target.clone()));
            }
            if separator.is_empty() || cell_ids.len() != 2 || cell_ids[0] == cell_ids[1] {
                return Err(Rejection::Malformed("split needs a separator and two distinct cell ids".into()));
            }
            require_child_legal(node.kind, *cell_kind)?;
            if !holds_text(*cell_kind) {
                return Err(Rejection::Malformed(format!("{cell_kind} cells hold no text")));
            }
            for id in cell_ids {
                require_fresh(doc, id)?;
            }
            let (first, second) = split_first(node.text.as_deref().unwrap_or(""), separator);
            let node = out.find_mut(target).expect("checked");
            node.text = None;
            node.children = vec![
                Node::new(cell_ids[0].clone(), *cell_kind).with_text(first),
                Node::new(cell_ids[1].clone(), *cell_kind).with_text(second),
            ];
            for id in cell_ids {
                out.note_id(id);
            }
        }
        PrimitiveEdit::SortChildren { target, permutation, .. } => {
            let node = require(doc, target)?;
            let current: HashSet<&NodeId> = node.children.iter().map(|c| &c.id).collect();
            let wanted: HashSet<&NodeId> = permutation.iter().collect();
            if permutation.len() != node.children.len() || current != wanted {
                return Err(Rejection::StalePermutation(target.clone()));
            }
            let node = out.find_mut(target).expect("checked");
            let mut by_id: HashMap<NodeId, Node> =
                std::mem::take(&mut node.children).into_iter().map(|c| (c.id.clone(), c)).collect();
            node.children = permutation.iter().map(|id| by_id.remove(id).expect("checked")).collect();
        }
        PrimitiveEdit::AddColumn { table, header, default, cell_ids } => {
            let node = require(doc, table)?;
            require_kind(node, NodeKind::Table)?;
            let rows: Vec<(NodeId, bool)> = table_rows(node)
                .into_iter()
                .map(|r| (r.id.clone(), node.children.iter().any(|c| c.id == r.id)))
                .collect();
            let mut fresh = HashSet::new();
            for (row, _) in &rows {
                let cell = cell_ids.get(row).ok_or_else(|| Rejection::MissingCellId(row.clone()))?;
                require_fresh(doc, cell)?;
                if !fresh.insert(cell) {
                    return Err(Rejection::DuplicateId(cell.clone()));
                }
                if doc.find(row).is_some_and(|r| r.text.is_some()) {
                    return Err(Rejection::TextLeaf(row.clone()));
                }
            }
            for (row, is_header) in rows {
                let cell = cell_ids[&row].clone();
                let text = if is_header { header.clone() } else { default.clone() };
                out.find_mut(&row).expect("checked").children.push(Node::new(cell.clone(), NodeKind::TableCell).with_text(text));
                out.note_id(&cell);
            }
        }
        PrimitiveEdit::SetUserId { target, new_user_id, .. } => {
            require(doc, target)?;
            if let Some(uid) = new_user_id {
                if uid.is_empty() || uid.contains('\'') {
                    return Err(Rejection::Malformed(format!("bad user id {uid:?}")));
                }
                if doc.find_by_user_id(uid).is_some_and(|n| &n.id != target) {
                    return Err(Rejection::DuplicateUserId(uid.clone()));
                }
            }
            out.find_mut(target).expect("checked").user_id = new_user_id.clone();
        }
    }
    if let PrimitiveEdit::InsertNode { node: NodeSpec { user_id: Some(uid), .. }, .. } = edit {
        if uid.is_empty() || uid.contains('\'') {
            return Err(Rejection::Malformed(format!("bad user id {uid:?}")));
        }
    }
    Ok(out)
}

/// Applies one primitive edit, rewriting the selectors of every pre-existing
/// formula so each keeps denoting the same nodes.
pub fn apply_primitive(doc: &Document, edit: &PrimitiveEdit) -> Result<Document, Rejection> {
    let mut after = apply_shape(doc, edit)?;
    rewrite_formulas(doc, &mut after, edit);
    Ok(after)
}

fn rewrite_formulas(before: &Document, after: &mut Document, edit: &PrimitiveEdit) {
    let skip: Option<&NodeId> = match edit {
        PrimitiveEdit::SetFormula { target, .. } | PrimitiveEdit::InsertNode { id: target, .. } => Some(target),
        _ => None,
    };
    let computed: Vec<NodeId> = after
        .nodes()
        .filter(|n| n.kind == NodeKind::Computed && Some(&n.id) != skip)
        .map(|n| n.id.clone())
        .collect();
    if computed.is_empty() {
        return;
    }
    let mut cache: HashMap<Selector, Selector> = HashMap::new();
    let mut updates = Vec::new();
    for id in computed {
        let formula = after.find(&id).and_then(|n| n.formula.as_ref()).expect("computed nodes carry formulas");
        let rewritten = formula.map_selectors(&mut |sel| {
            cache
                .entry(sel.clone())
                .or_insert_with(|| selector::rewrite_selector_between(sel, edit, before, after).selector)
                .clone()
        });
        if &rewritten != formula {
            updates.push((id, rewritten));
        }
    }
    for (id, formula) in updates {
        let node = after.find_mut(&id).expect("exists");
        node.formula = Some(formula);
        node.cached = None;
    }
}

/// Applies an edit-log entry and checks every document invariant afterwards.
/// Intermediate states inside a composite are exempt from the legality check.
pub fn apply(doc: &Document, op: &EditOp) -> Result<Document, Rejection> {
    let mut current = doc.clone();
    for edit in op.primitives() {
        current = apply_primitive(&current, edit)?;
    }
    current.validate()?;
    Ok(current)
}

/// Like [`apply`], also returning every node the edit touched.
pub fn apply_traced(doc: &Document, op: &EditOp) -> Result<(Document, HashSet<NodeId>), Rejection> {
    let mut current = doc.clone();
    let mut touched = HashSet::new();
    for edit in op.primitives() {
        touched.extend(edit.touched(&current));
        current = apply_primitive(&current, edit)?;
    }
    current.validate()?;
    Ok((current, touched))
}

/// `None` iff [`apply`] would succeed.
pub fn validate(doc: &Document, op: &EditOp) -> Option<Rejection> {
    apply(doc, op).err()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario;

    fn fig2() -> (Document, scenario::Ids) {
        scenario::figure2()
    }

    #[test]
    fn insert_then_sort_gives_figure3_order() {
        let (doc, ids) = fig2();
        let ada = NodeId::new(ReplicaId::new("org1").unwrap(), 1);
        let insert = PrimitiveEdit::InsertNode {
            parent: ids.speakers.clone(),
            position: 0,
            node: NodeSpec::text(NodeKind::ListItem, "Ada Lovelace, lovelace@rsoc.ac.uk"),
            id: ada,
        };
        let doc = apply(&doc, &insert.into()).unwrap();
        let list = doc.find(&ids.speakers).unwrap();
        let sort = PrimitiveEdit::SortChildren {
            target: ids.speakers.clone(),
            key: SortKey::FIRST_WORD,
            permutation: SortKey::FIRST_WORD.order(list),
        };
        let doc = apply(&doc, &sort.into()).unwrap();
        let names: Vec<String> =
            doc.find(&ids.speakers).unwrap().children.iter().map(|c| c.text.clone().unwrap()).collect();
        assert_eq!(
            names,
            [
                "Ada Lovelace, lovelace@rsoc.ac.uk",
                "Adele Goldberg, adele@xerox.com",
                "Betty Jean Jennings, betty@rand.com",
                "Margaret Hamilton, hamilton@mit.com"
            ]
        );
    }

    #[test]
    fn split_value_on_first_separator() {
        let (doc, ids) = fig2();
        let adele = ids.speaker_items[0].clone();
        let r = ReplicaId::new("B").unwrap();
        let doc = apply_shape(
            &doc,
            &PrimitiveEdit::ChangeNodeKind { target: ids.speakers.clone(), from: NodeKind::List, to: NodeKind::Table },
        )
        .unwrap();
        let doc = apply_shape(
            &doc,
            &PrimitiveEdit::WrapChildren {
                target: ids.speakers.clone(),
                wrapper_kind: NodeKind::TableBody,
                wrapper_id: NodeId::new(r.clone(), 1),
            },
        )
        .unwrap();
        let doc = apply_shape(
            &doc,
            &PrimitiveEdit::ChangeNodeKind { target: adele.clone(), from: NodeKind::ListItem, to: NodeKind::TableRow },
        )
        .unwrap();
        let split = PrimitiveEdit::SplitValue {
            target: adele.clone(),
            separator: ",".into(),
            cell_kind: NodeKind::TableCell,
            cell_ids: vec![NodeId::new(r.clone(), 2), NodeId::new(r, 3)],
        };
        let doc = apply_shape(&doc, &split).unwrap();
        let cells: Vec<&str> =
            doc.find(&adele).unwrap().children.iter().map(|c| c.text.as_deref().unwrap()).collect();
        assert_eq!(cells, ["Adele Goldberg", "adele@xerox.com"]);
        assert_eq!(apply_shape(&doc, &split).unwrap_err().code(), "split-non-leaf");
    }

    #[test]
    fn split_without_separator_leaves_second_cell_empty() {
        assert_eq!(split_first("  Ada  ", ","), ("Ada".to_string(), String::new()));
        assert_eq!(split_first("a, b, c", ","), ("a".to_string(), "b, c".to_string()));
    }

    #[test]
    fn remove_missing_target() {
        let (doc, _) = fig2();
        let ghost = NodeId::new(ReplicaId::new("Z").unwrap(), 99);
        let err = validate(&doc, &PrimitiveEdit::RemoveNode { target: ghost }.into()).unwrap();
        assert_eq!(err.code(), "missing-target");
    }

    #[test]
    fn validate_accepts_valid_insert() {
        let (doc, ids) = fig2();
        let op = PrimitiveEdit::InsertNode {
            parent: ids.speakers.clone(),
            position: 3,
            node: NodeSpec::text(NodeKind::ListItem, "Grace Hopper, grace@navy.mil"),
            id: NodeId::new(ReplicaId::new("A").unwrap(), 50),
        };
        assert_eq!(validate(&doc, &op.into()), None);
    }

    #[test]
    fn wrapping_list_children_in_cells_is_kind_illegal() {
        let (doc, ids) = fig2();
        let op = PrimitiveEdit::WrapChildren {
            target: ids.speakers.clone(),
            wrapper_kind: NodeKind::TableCell,
            wrapper_id: NodeId::new(ReplicaId::new("A").unwrap(), 50),
        };
        assert_eq!(validate(&doc, &op.into()).unwrap().code(), "kind-illegal");
    }

    #[test]
    fn stale_permutation_is_rejected() {
        let (doc, ids) = fig2();
        let recorded = SortKey::FIRST_WORD.order(doc.find(&ids.speakers).unwrap());
        let insert = PrimitiveEdit::InsertNode {
            parent: ids.speakers.clone(),
            position: 1,
            node: NodeSpec::text(NodeKind::ListItem, "Grace Hopper"),
            id: NodeId::new(ReplicaId::new("A").unwrap(), 50),
        };
        let doc = apply(&doc, &insert.into()).unwrap();
        let sort = PrimitiveEdit::SortChildren { target: ids.speakers, key: SortKey::FIRST_WORD, permutation: recorded };
        assert_eq!(validate(&doc, &sort.into()).unwrap().code(), "stale-permutation");
    }

    #[test]
    fn op_level_check_catches_half_done_refactor() {
        let (doc, ids) = fig2();
        let op = PrimitiveEdit::ChangeNodeKind { target: ids.speakers, from: NodeKind::List, to: NodeKind::Table };
        assert_eq!(validate(&doc, &op.into()).unwrap().code(), "invariant");
    }

    #[test]
    fn sort_key_text_round_trip() {
        for key in ["first-word", "full-text desc"] {
            assert_eq!(key.parse::<SortKey>().unwrap().to_string(), key);
        }
        assert!("shoe-size".parse::<SortKey>().is_err());
    }

    #[test]
    fn edit_json_shape() {
        let op = PrimitiveEdit::SetValue {
            target: NodeId::new(ReplicaId::new("A").unwrap(), 3),
            new_text: "TP".into(),
            old_text: Some(String::new()),
        };
        let json = serde_json::to_string(&EditOp::from(op.clone())).unwrap();
        assert_eq!(json, r#"{"op":"set-value","target":"A:3","newText":"TP","oldText":""}"#);
        assert_eq!(serde_json::from_str::<EditOp>(&json).unwrap(), EditOp::Primitive(op));
    }
}
