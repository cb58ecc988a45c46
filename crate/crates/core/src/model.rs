//! The document tree: typed block nodes with hidden stable identities.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::{Formula, Value};

/// Identifier of one replica (one user's copy of a document).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReplicaId(String);

impl ReplicaId {
    pub fn new(raw: impl Into<String>) -> Result<Self, DocError> {
        let raw = raw.into();
        if raw.is_empty() || raw.chars().any(|c| c == '/' || c == ':' || c.is_whitespace()) {
            return Err(DocError::InvalidReplica(raw));
        }
        Ok(ReplicaId(raw))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for ReplicaId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ReplicaId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        ReplicaId::new(raw).map_err(serde::de::Error::custom)
    }
}

/// Hidden node identity, `(replica, counter)`. Ordered by replica, then counter.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub replica: ReplicaId,
    pub counter: u64,
}

impl NodeId {
    pub fn new(replica: ReplicaId, counter: u64) -> Self {
        NodeId { replica, counter }
    }

    /// A deterministic id derived from another node's id and a tag. Used when
    /// a merge has to create a node the issuing replica never allocated.
    pub fn derived(base: &NodeId, tag: &str) -> Self {
        let raw = format!("{}.{}~{}", base.replica, base.counter, tag);
        NodeId { replica: ReplicaId(raw), counter: 0 }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.replica, self.counter)
    }
}

impl FromStr for NodeId {
    type Err = DocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DocError::InvalidNodeId(s.to_string());
        let (replica, counter) = s.rsplit_once(':').ok_or_else(bad)?;
        let counter = counter.parse().map_err(|_| bad())?;
        Ok(NodeId { replica: ReplicaId::new(replica).map_err(|_| bad())?, counter })
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "document")]
    Document,
    #[serde(rename = "heading")]
    Heading,
    #[serde(rename = "p")]
    Paragraph,
    #[serde(rename = "ul")]
    List,
    #[serde(rename = "li")]
    ListItem,
    #[serde(rename = "table")]
    Table,
    #[serde(rename = "tbody")]
    TableBody,
    #[serde(rename = "tr")]
    TableRow,
    #[serde(rename = "td")]
    TableCell,
    #[serde(rename = "dl")]
    DefList,
    #[serde(rename = "dt")]
    DefTerm,
    #[serde(rename = "dd")]
    DefValue,
    #[serde(rename = "computed")]
    Computed,
}

impl NodeKind {
    pub const ALL: [NodeKind; 13] = [
        NodeKind::Document,
        NodeKind::Heading,
        NodeKind::Paragraph,
        NodeKind::List,
        NodeKind::ListItem,
        NodeKind::Table,
        NodeKind::TableBody,
        NodeKind::TableRow,
        NodeKind::TableCell,
        NodeKind::DefList,
        NodeKind::DefTerm,
        NodeKind::DefValue,
        NodeKind::Computed,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            NodeKind::Document => "document",
            NodeKind::Heading => "heading",
            NodeKind::Paragraph => "p",
            NodeKind::List => "ul",
            NodeKind::ListItem => "li",
            NodeKind::Table => "table",
            NodeKind::TableBody => "tbody",
            NodeKind::TableRow => "tr",
            NodeKind::TableCell => "td",
            NodeKind::DefList => "dl",
            NodeKind::DefTerm => "dt",
            NodeKind::DefValue => "dd",
            NodeKind::Computed => "computed",
        }
    }

    pub fn from_tag(tag: &str) -> Option<NodeKind> {
        NodeKind::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// Kinds a selector step may name.
    pub fn is_selectable(self) -> bool {
        !matches!(self, NodeKind::Document | NodeKind::Computed)
    }

    /// Parent/child legality table.
    pub fn allows_child(self, child: NodeKind) -> bool {
        use NodeKind::*;
        match self {
            Document => matches!(child, Heading | Paragraph | List | Table | DefList),
            List => child == ListItem,
            // A table holds its body plus an optional header row.
            Table => matches!(child, TableBody | TableRow),
            TableBody => child == TableRow,
            TableRow => child == TableCell,
            DefList => matches!(child, DefTerm | DefValue),
            Paragraph | DefValue => child == Computed,
            Heading | ListItem | TableCell | DefTerm | Computed => false,
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One block of the document.
#[derive(Clone, Debug)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub user_id: Option<String>,
    pub text: Option<String>,
    pub formula: Option<Formula>,
    /// Last evaluated value of a computed node. Derived state: not serialized
    /// and ignored by structural equality.
    pub cached: Option<Value>,
    pub children: Vec<Node>,
}

impl Node {
    pub fn new(id: NodeId, kind: NodeKind) -> Self {
        Node { id, kind, user_id: None, text: None, formula: None, cached: None, children: Vec::new() }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_user_id(mut self, user_id: impl Into<String>) -> Self {
        self.user_id = Some(user_id.into());
        self
    }

    pub fn with_formula(mut self, formula: Formula) -> Self {
        self.formula = Some(formula);
        self
    }

    pub fn with_children(mut self, children: Vec<Node>) -> Self {
        self.children = children;
        self
    }

    /// Pre-order traversal of this subtree.
    pub fn descendants(&self) -> impl Iterator<Item = &Node> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            stack.extend(node.children.iter().rev());
            Some(node)
        })
    }

    pub fn find(&self, id: &NodeId) -> Option<&Node> {
        self.descendants().find(|n| &n.id == id)
    }

    pub(crate) fn find_mut(&mut self, id: &NodeId) -> Option<&mut Node> {
        if &self.id == id {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(id))
    }

    pub(crate) fn parent_of_mut(&mut self, id: &NodeId) -> Option<&mut Node> {
        if self.children.iter().any(|c| &c.id == id) {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.parent_of_mut(id))
    }

    /// Text used when the node stands for a single value: its own text, or
    /// the space-joined text of its descendants.
    pub fn flat_text(&self) -> String {
        if let Some(text) = &self.text {
            return text.clone();
        }
        self.children.iter().map(Node::flat_text).filter(|t| !t.is_empty()).collect::<Vec<_>>().join(" ")
    }

    fn structurally_equal(&self, other: &Node) -> bool {
        self.kind == other.kind
            && self.user_id == other.user_id
            && self.text == other.text
            && self.formula == other.formula
            && self.children.len() == other.children.len()
            && self.children.iter().zip(&other.children).all(|(a, b)| a.structurally_equal(b))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DocError {
    #[error("invalid replica identifier {0:?}")]
    InvalidReplica(String),
    #[error("invalid node id {0:?}")]
    InvalidNodeId(String),
    #[error("invariant violation: {0}")]
    Invariant(#[from] InvariantViolation),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InvariantViolation {
    #[error("node id {0} occurs more than once")]
    DuplicateId(NodeId),
    #[error("user id {0:?} occurs more than once")]
    DuplicateUserId(String),
    #[error("{child_kind} node {child} may not appear under {parent_kind} node {parent}")]
    IllegalChild { parent: NodeId, parent_kind: NodeKind, child: NodeId, child_kind: NodeKind },
    #[error("root must be a document node, found {0}")]
    BadRoot(NodeKind),
    #[error("document node {0} below the root")]
    NestedDocument(NodeId),
    #[error("node {0} has a formula but is not a computed value")]
    StrayFormula(NodeId),
    #[error("computed node {0} has no formula")]
    MissingFormula(NodeId),
    #[error("node {0} carries both text and children")]
    TextWithChildren(NodeId),
}

/// A document: a tree of nodes plus the per-replica id allocation state.
#[derive(Clone, Debug)]
pub struct Document {
    root: Node,
    next_counter: BTreeMap<ReplicaId, u64>,
}

impl Document {
    /// An empty document whose root id is allocated from `replica`.
    pub fn new(replica: &str) -> Result<Self, DocError> {
        let replica = ReplicaId::new(replica)?;
        let root = Node::new(NodeId::new(replica.clone(), 0), NodeKind::Document);
        let mut next_counter = BTreeMap::new();
        next_counter.insert(replica, 1);
        Ok(Document { root, next_counter })
    }

    /// Builds a document from an existing tree, validating every invariant.
    /// Counters resume after the largest counter seen per replica.
    pub fn from_root(root: Node) -> Result<Self, DocError> {
        let mut doc = Document { root, next_counter: BTreeMap::new() };
        doc.validate()?;
        let ids: Vec<NodeId> = doc.root.descendants().map(|n| n.id.clone()).collect();
        for id in &ids {
            doc.note_id(id);
        }
        Ok(doc)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub(crate) fn root_mut(&mut self) -> &mut Node {
        &mut self.root
    }

    pub fn find(&self, id: &NodeId) -> Option<&Node> {
        self.root.find(id)
    }

    pub(crate) fn find_mut(&mut self, id: &NodeId) -> Option<&mut Node> {
        self.root.find_mut(id)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.find(id).is_some()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.root.descendants()
    }

    pub fn parent_of(&self, id: &NodeId) -> Option<&Node> {
        self.nodes().find(|n| n.children.iter().any(|c| &c.id == id))
    }

    /// Position of `id` among all children of its parent.
    pub fn index_in_parent(&self, id: &NodeId) -> Option<usize> {
        self.parent_of(id)?.children.iter().position(|c| &c.id == id)
    }

    pub fn find_by_user_id(&self, user_id: &str) -> Option<&Node> {
        self.nodes().find(|n| n.user_id.as_deref() == Some(user_id))
    }

    /// Chain of ancestors from the root down to (excluding) `id`.
    pub fn ancestors(&self, id: &NodeId) -> Option<Vec<&Node>> {
        fn walk<'a>(node: &'a Node, id: &NodeId, path: &mut Vec<&'a Node>) -> bool {
            if &node.id == id {
                return true;
            }
            path.push(node);
            if node.children.iter().any(|c| walk(c, id, path)) {
                return true;
            }
            path.pop();
            false
        }
        let mut path = Vec::new();
        walk(&self.root, id, &mut path).then_some(path)
    }

    pub fn is_ancestor_or_self(&self, ancestor: &NodeId, id: &NodeId) -> bool {
        self.find(ancestor).is_some_and(|a| a.find(id).is_some())
    }

    /// Allocates the next id for `replica`.
    pub fn allocate(&mut self, replica: &ReplicaId) -> NodeId {
        let next = self.next_counter.entry(replica.clone()).or_insert(0);
        let id = NodeId::new(replica.clone(), *next);
        *next += 1;
        id
    }

    /// Records that `id` exists so the replica's counter moves past it.
    pub(crate) fn note_id(&mut self, id: &NodeId) {
        let next = self.next_counter.entry(id.replica.clone()).or_insert(0);
        *next = (*next).max(id.counter + 1);
    }

    pub fn next_counter(&self, replica: &ReplicaId) -> u64 {
        self.next_counter.get(replica).copied().unwrap_or(0)
    }

    /// Checks every tree invariant.
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        if self.root.kind != NodeKind::Document {
            return Err(InvariantViolation::BadRoot(self.root.kind));
        }
        let mut ids = HashSet::new();
        let mut user_ids = HashSet::new();
        for node in self.nodes() {
            if !ids.insert(&node.id) {
                return Err(InvariantViolation::DuplicateId(node.id.clone()));
            }
            if let Some(uid) = &node.user_id {
                if !user_ids.insert(uid.as_str()) {
                    return Err(InvariantViolation::DuplicateUserId(uid.clone()));
                }
            }
            if node.kind == NodeKind::Document && node.id != self.root.id {
                return Err(InvariantViolation::NestedDocument(node.id.clone()));
            }
            match (node.kind == NodeKind::Computed, node.formula.is_some()) {
                (true, false) => return Err(InvariantViolation::MissingFormula(node.id.clone())),
                (false, true) => return Err(InvariantViolation::StrayFormula(node.id.clone())),
                _ => {}
            }
            if node.text.is_some() && !node.children.is_empty() {
                return Err(InvariantViolation::TextWithChildren(node.id.clone()));
            }
            for child in &node.children {
                if !node.kind.allows_child(child.kind) {
                    return Err(InvariantViolation::IllegalChild {
                        parent: node.id.clone(),
                        parent_kind: node.kind,
                        child: child.id.clone(),
                        child_kind: child.kind,
                    });
                }
            }
        }
        Ok(())
    }

    /// Equality ignoring node ids and cached values.
    pub fn structurally_equal(&self, other: &Document) -> bool {
        self.root.structurally_equal(&other.root)
    }

    /// Plain-text rendering, one line per block.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for child in &self.root.children {
            render_block(child, &mut out);
        }
        out
    }

    /// The canonical JSON encoding (fixed field order, two-space indent,
    /// trailing newline).
    pub fn to_canonical_json(&self) -> String {
        let mut json = serde_json::to_string_pretty(&NodeRepr::from(&self.root))
            .expect("document serialization cannot fail");
        json.push('\n');
        json
    }

    pub fn from_json(json: &str) -> Result<Self, LoadError> {
        let repr: NodeRepr = serde_json::from_str(json)?;
        let root = repr.into_node()?;
        Ok(Document::from_root(root)?)
    }
}

fn render_block(node: &Node, out: &mut String) {
    match node.kind {
        NodeKind::List => {
            for item in &node.children {
                push_line(out, &format!("- {}", inline(item)));
            }
        }
        NodeKind::Table => {
            for child in &node.children {
                match child.kind {
                    NodeKind::TableBody => {
                        for row in &child.children {
                            push_line(out, &render_row(row));
                        }
                    }
                    _ => push_line(out, &render_row(child)),
                }
            }
        }
        NodeKind::DefList => {
            for item in &node.children {
                match item.kind {
                    NodeKind::DefValue => push_line(out, &format!("  {}", inline(item))),
                    _ => push_line(out, &inline(item)),
                }
            }
        }
        _ => push_line(out, &inline(node)),
    }
}

fn render_row(row: &Node) -> String {
    if row.children.is_empty() {
        return inline(row);
    }
    row.children.iter().map(inline).collect::<Vec<_>>().join(" | ")
}

fn inline(node: &Node) -> String {
    if node.kind == NodeKind::Computed {
        return match (&node.cached, &node.formula) {
            (Some(value), _) => value.to_string(),
            (None, Some(formula)) => formula.to_string(),
            (None, None) => String::new(),
        };
    }
    if let Some(text) = &node.text {
        return text.clone();
    }
    node.children.iter().map(inline).collect::<Vec<_>>().join(" ")
}

fn push_line(out: &mut String, line: &str) {
    out.push_str(line);
    out.push('\n');
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("malformed document JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad node {id}: {reason}")]
    BadNode { id: String, reason: String },
    #[error(transparent)]
    Doc(#[from] DocError),
}

/// Wire shape of one node in the canonical encoding.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRepr {
    id: String,
    kind: String,
    #[serde(rename = "userId", default, skip_serializing_if = "Option::is_none")]
    user_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    formula: Option<String>,
    #[serde(default)]
    children: Vec<NodeRepr>,
}

impl From<&Node> for NodeRepr {
    fn from(node: &Node) -> Self {
        NodeRepr {
            id: node.id.to_string(),
            kind: node.kind.tag().to_string(),
            user_id: node.user_id.clone(),
            text: node.text.clone(),
            formula: node.formula.as_ref().map(ToString::to_string),
            children: node.children.iter().map(NodeRepr::from).collect(),
        }
    }
}

impl NodeRepr {
    fn into_node(self) -> Result<Node, LoadError> {
        let bad = |reason: String| LoadError::BadNode { id: self.id.clone(), reason };
        let id: NodeId = self.id.parse().map_err(|e: DocError| bad(e.to_string()))?;
        let kind = NodeKind::from_tag(&self.kind).ok_or_else(|| bad(format!("unknown kind {:?}", self.kind)))?;
        let formula = match &self.formula {
            Some(src) => Some(Formula::parse(src).map_err(|e| bad(e.to_string()))?),
            None => None,
        };
        let children = self.children.into_iter().map(NodeRepr::into_node).collect::<Result<_, _>>()?;
        Ok(Node { id, kind, user_id: self.user_id, text: self.text, formula, cached: None, children })
    }
}
