use sha2::{Digest, Sha256};

use super::{table_rows, Composite, CompositeEdit, NodeSpec, PrimitiveEdit, Rejection};
use crate::model::{Document, NodeId, NodeKind, ReplicaId};

/// Supplies the ids a composite expansion creates.
pub trait IdSource {
    fn wrapper(&mut self, list: &NodeId) -> NodeId;
    fn header_row(&mut self, list: &NodeId) -> NodeId;
    fn header_cell(&mut self, list: &NodeId, column: usize) -> NodeId;
    fn split_cells(&mut self, row: &NodeId) -> [NodeId; 2];
    fn column_cell(&mut self, row: &NodeId, column: usize, header: &str) -> NodeId;
}

/// Fresh sequential ids for one replica.
#[derive(Clone, Debug)]
pub struct Allocator {
    replica: ReplicaId,
    next: u64,
}

impl Allocator {
    pub fn new(replica: ReplicaId, next: u64) -> Self {
        Allocator { replica, next: next.max(1) }
    }

    pub fn for_doc(doc: &Document, replica: &ReplicaId) -> Self {
        Allocator::new(replica.clone(), doc.next_counter(replica))
    }

    pub fn fresh(&mut self) -> NodeId {
        let id = NodeId::new(self.replica.clone(), self.next);
        self.next += 1;
        id
    }

    pub fn next_counter(&self) -> u64 {
        self.next
    }
}

impl IdSource for Allocator {
    fn wrapper(&mut self, _: &NodeId) -> NodeId {
        self.fresh()
    }

    fn header_row(&mut self, _: &NodeId) -> NodeId {
        self.fresh()
    }

    fn header_cell(&mut self, _: &NodeId, _: usize) -> NodeId {
        self.fresh()
    }

    fn split_cells(&mut self, _: &NodeId) -> [NodeId; 2] {
        [self.fresh(), self.fresh()]
    }

    fn column_cell(&mut self, _: &NodeId, _: usize, _: &str) -> NodeId {
        self.fresh()
    }
}

/// Ids derived from the node they belong to, so that independent parties
/// mint the same ids for the same structural role.
#[derive(Clone, Copy, Debug, Default)]
pub struct DerivedIds;

impl DerivedIds {
    pub fn column_tag(column: usize, header: &str) -> String {
        let digest = Sha256::digest(header.as_bytes());
        format!("c{column}-{}", hex::encode(&digest[..4]))
    }
}

impl IdSource for DerivedIds {
    fn wrapper(&mut self, list: &NodeId) -> NodeId {
        NodeId::derived(list, "w")
    }

    fn header_row(&mut self, list: &NodeId) -> NodeId {
        NodeId::derived(list, "h")
    }

    fn header_cell(&mut self, list: &NodeId, column: usize) -> NodeId {
        NodeId::derived(list, &format!("h{column}"))
    }

    fn split_cells(&mut self, row: &NodeId) -> [NodeId; 2] {
        [NodeId::derived(row, "s0"), NodeId::derived(row, "s1")]
    }

    fn column_cell(&mut self, row: &NodeId, column: usize, header: &str) -> NodeId {
        NodeId::derived(row, &Self::column_tag(column, header))
    }
}

/// Expands "refactor list to table" into primitives: the list becomes a
/// table, its items become body rows split into two cells, a header row
/// holds the first two headers and each further header adds a column filled
/// with `default`.
pub fn expand_refactor_list_to_table(
    doc: &Document,
    list: &NodeId,
    separator: &str,
    headers: &[String],
    default: &str,
    ids: &mut impl IdSource,
) -> Result<CompositeEdit, Rejection> {
    let node = doc.find(list).ok_or_else(|| Rejection::MissingTarget(list.clone()))?;
    if node.kind != NodeKind::List {
        return Err(Rejection::WrongKind { id: list.clone(), expected: "ul".into(), actual: node.kind });
    }
    if separator.is_empty() {
        return Err(Rejection::Malformed("empty separator".into()));
    }
    if headers.len() < 2 {
        return Err(Rejection::Malformed("a table needs at least two headers".into()));
    }
    if let Some(item) = node.children.iter().find(|c| !c.children.is_empty()) {
        return Err(Rejection::SplitNonLeaf(item.id.clone()));
    }

    let mut expansion = vec![
        PrimitiveEdit::ChangeNodeKind { target: list.clone(), from: NodeKind::List, to: NodeKind::Table },
        PrimitiveEdit::WrapChildren {
            target: list.clone(),
            wrapper_kind: NodeKind::TableBody,
            wrapper_id: ids.wrapper(list),
        },
    ];
    let items: Vec<NodeId> = node.children.iter().map(|c| c.id.clone()).collect();
    for item in &items {
        expansion.push(PrimitiveEdit::ChangeNodeKind {
            target: item.clone(),
            from: NodeKind::ListItem,
            to: NodeKind::TableRow,
        });
    }
    for item in &items {
        expansion.push(PrimitiveEdit::SplitValue {
            target: item.clone(),
            separator: separator.to_string(),
            cell_kind: NodeKind::TableCell,
            cell_ids: ids.split_cells(item).to_vec(),
        });
    }
    let header_row = ids.header_row(list);
    expansion.push(PrimitiveEdit::InsertNode {
        parent: list.clone(),
        position: 0,
        node: NodeSpec::new(NodeKind::TableRow),
        id: header_row.clone(),
    });
    for (column, header) in headers[..2].iter().enumerate() {
        expansion.push(PrimitiveEdit::InsertNode {
            parent: header_row.clone(),
            position: column,
            node: NodeSpec::text(NodeKind::TableCell, header.clone()),
            id: ids.header_cell(list, column),
        });
    }
    for (offset, header) in headers[2..].iter().enumerate() {
        let column = offset + 2;
        let rows = std::iter::once(&header_row).chain(&items);
        let cell_ids = rows.map(|row| (row.clone(), ids.column_cell(row, column, header))).collect();
        expansion.push(PrimitiveEdit::AddColumn {
            table: list.clone(),
            header: header.clone(),
            default: default.to_string(),
            cell_ids,
        });
    }
    Ok(CompositeEdit {
        composite: Composite::RefactorListToTable {
            list: list.clone(),
            separator: separator.to_string(),
            headers: headers.to_vec(),
            default: default.to_string(),
        },
        expansion,
    })
}

/// Cell ids for a new column across the current rows of `table`.
pub(crate) fn column_cell_ids(
    table: &crate::model::Node,
    header: &str,
    ids: &mut impl IdSource,
) -> std::collections::BTreeMap<NodeId, NodeId> {
    let rows = table_rows(table);
    let column = rows.first().map_or(0, |r| r.children.len());
    rows.into_iter().map(|r| (r.id.clone(), ids.column_cell(&r.id, column, header))).collect()
}
