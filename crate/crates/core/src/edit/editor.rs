use super::{
    apply, column_cell_ids, expand_refactor_list_to_table, Allocator, EditLog, EditOp, LogEntry, NodeSpec,
    PrimitiveEdit, Rejection, SortKey,
};
use crate::model::{Document, NodeId, NodeKind, ReplicaId};
use crate::store::VersionHash;

/// One replica's editing session: applies edits to its working copy and
/// records them in an edit log against the base version.
#[derive(Clone, Debug)]
pub struct Editor {
    doc: Document,
    log: EditLog,
    clock: u64,
}

impl Editor {
    pub fn new(base: Document, replica: ReplicaId) -> Self {
        let log = EditLog::new(VersionHash::of(&base), replica);
        Editor { doc: base, log, clock: 0 }
    }

    pub fn doc(&self) -> &Document {
        &self.doc
    }

    pub fn log(&self) -> &EditLog {
        &self.log
    }

    pub fn replica(&self) -> &ReplicaId {
        &self.log.replica
    }

    pub fn into_parts(self) -> (Document, EditLog) {
        (self.doc, self.log)
    }

    fn alloc(&self) -> Allocator {
        Allocator::for_doc(&self.doc, &self.log.replica)
    }

    /// Applies and records an arbitrary edit.
    pub fn apply(&mut self, op: EditOp) -> Result<(), Rejection> {
        self.doc = apply(&self.doc, &op)?;
        self.clock += 1;
        self.log.entries.push(LogEntry { ts: self.clock, op });
        Ok(())
    }

    pub fn insert(&mut self, parent: &NodeId, position: usize, node: NodeSpec) -> Result<NodeId, Rejection> {
        let id = self.alloc().fresh();
        self.apply(PrimitiveEdit::InsertNode { parent: parent.clone(), position, node, id: id.clone() }.into())?;
        Ok(id)
    }

    /// Appends a new last child of `parent`.
    pub fn append(&mut self, parent: &NodeId, node: NodeSpec) -> Result<NodeId, Rejection> {
        let position = self.doc.find(parent).map_or(0, |p| p.children.len());
        self.insert(parent, position, node)
    }

    pub fn remove(&mut self, target: &NodeId) -> Result<(), Rejection> {
        self.apply(PrimitiveEdit::RemoveNode { target: target.clone() }.into())
    }

    pub fn set_text(&mut self, target: &NodeId, text: &str) -> Result<(), Rejection> {
        let old_text = self.doc.find(target).and_then(|n| n.text.clone());
        self.apply(PrimitiveEdit::SetValue { target: target.clone(), new_text: text.to_string(), old_text }.into())
    }

    pub fn set_formula(&mut self, target: &NodeId, source: &str) -> Result<(), Rejection> {
        let old_source = self
            .doc
            .find(target)
            .and_then(|n| n.formula.as_ref())
            .map(ToString::to_string)
            .unwrap_or_default();
        self.apply(
            PrimitiveEdit::SetFormula { target: target.clone(), new_source: source.to_string(), old_source }.into(),
        )
    }

    pub fn change_kind(&mut self, target: &NodeId, to: NodeKind) -> Result<(), Rejection> {
        let from = self.doc.find(target).ok_or_else(|| Rejection::MissingTarget(target.clone()))?.kind;
        self.apply(PrimitiveEdit::ChangeNodeKind { target: target.clone(), from, to }.into())
    }

    pub fn set_user_id(&mut self, target: &NodeId, user_id: Option<&str>) -> Result<(), Rejection> {
        let old_user_id = self.doc.find(target).and_then(|n| n.user_id.clone());
        self.apply(
            PrimitiveEdit::SetUserId {
                target: target.clone(),
                new_user_id: user_id.map(String::from),
                old_user_id,
            }
            .into(),
        )
    }

    pub fn sort(&mut self, target: &NodeId, key: SortKey) -> Result<(), Rejection> {
        let node = self.doc.find(target).ok_or_else(|| Rejection::MissingTarget(target.clone()))?;
        let permutation = key.order(node);
        self.apply(PrimitiveEdit::SortChildren { target: target.clone(), key, permutation }.into())
    }

    pub fn refactor_list_to_table(
        &mut self,
        list: &NodeId,
        separator: &str,
        headers: &[&str],
        default: &str,
    ) -> Result<(), Rejection> {
        let headers: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
        let mut alloc = self.alloc();
        let op = expand_refactor_list_to_table(&self.doc, list, separator, &headers, default, &mut alloc)?;
        self.apply(EditOp::Composite(op))
    }

    pub fn add_column(&mut self, table: &NodeId, header: &str, default: &str) -> Result<(), Rejection> {
        let node = self.doc.find(table).ok_or_else(|| Rejection::MissingTarget(table.clone()))?;
        let cell_ids = column_cell_ids(node, header, &mut self.alloc());
        self.apply(
            PrimitiveEdit::AddColumn {
                table: table.clone(),
                header: header.to_string(),
                default: default.to_string(),
                cell_ids,
            }
            .into(),
        )
    }
}
