use std::collections::{BTreeMap, BTreeSet};

use blockmerge::edit::{apply, EditLog, EditOp, LogEntry};
use blockmerge::formula::{dirty_set, evaluate_all, recompute, Value};
use blockmerge::merge::{Choice, ConflictId};
use blockmerge::model::{Document, NodeId, ReplicaId};
use blockmerge::store::VersionHash;
use blockmerge::Rejection;

/// One hosted document: a replica's current state and the edits it made
/// since its base.
#[derive(Clone, Debug)]
pub struct Session {
    pub replica: ReplicaId,
    pub base: Document,
    pub doc: Document,
    pub log: EditLog,
    /// Each version the document reached, with the computed values that
    /// were invalidated on the way there.
    history: Vec<(VersionHash, BTreeSet<NodeId>)>,
    pub pending: Option<PendingMerge>,
}

/// A merge waiting for conflict choices. It is replayed from scratch with
/// the choices collected so far, which is sound because merging is
/// deterministic.
#[derive(Clone, Debug)]
pub struct PendingMerge {
    pub a: EditLog,
    pub b: EditLog,
    /// Sessions that receive the converged document.
    pub publish_to: Vec<String>,
    pub answers: BTreeMap<ConflictId, Choice>,
    pub waiting_on: ConflictId,
}

/// What an accepted change did to the computed values.
#[derive(Clone, Debug)]
pub struct Published {
    pub version: VersionHash,
    pub dirty: BTreeSet<NodeId>,
    pub values: BTreeMap<NodeId, Value>,
}

impl Session {
    pub fn new(doc: Document, replica: ReplicaId) -> Session {
        let version = VersionHash::of(&doc);
        Session {
            log: EditLog::new(version.clone(), replica.clone()),
            replica,
            base: doc.clone(),
            doc,
            history: vec![(version, BTreeSet::new())],
            pending: None,
        }
    }

    pub fn version(&self) -> VersionHash {
        VersionHash::of(&self.doc)
    }

    /// Applies and logs one edit, recomputing the values it invalidates.
    pub fn edit(&mut self, op: EditOp) -> Result<Published, Rejection> {
        let dirty = dirty_set(&self.doc, &op)?;
        let after = apply(&self.doc, &op)?;
        let after = recompute(&after, &dirty).expect("dirty ids are computed nodes of the document");
        after.validate()?;
        let ts = self.log.entries.last().map_or(1, |e| e.ts + 1);
        self.log.entries.push(LogEntry { ts, op });
        Ok(self.advance(after, dirty))
    }

    /// Replaces the document with a merge result, which becomes the new
    /// base. `dirty` holds the values the merge invalidated relative to the
    /// merge base; values differing from this session's own previous state
    /// are added.
    pub fn publish(&mut self, merged: &Document, dirty: &BTreeSet<NodeId>) -> Published {
        let old = evaluate_all(&self.doc);
        let mut dirty = dirty.clone();
        for (id, value) in evaluate_all(merged) {
            if old.get(&id) != Some(&value) {
                dirty.insert(id);
            }
        }
        self.base = merged.clone();
        self.log = EditLog::new(VersionHash::of(merged), self.replica.clone());
        self.advance(merged.clone(), dirty)
    }

    fn advance(&mut self, doc: Document, dirty: BTreeSet<NodeId>) -> Published {
        let mut all = evaluate_all(&doc);
        let values = dirty.iter().filter_map(|id| Some((id.clone(), all.remove(id)?))).collect();
        self.doc = doc;
        let version = self.version();
        self.history.push((version.clone(), dirty.clone()));
        Published { version, dirty, values }
    }

    /// Computed values invalidated since `version`, or `None` if the
    /// document never had that version.
    pub fn dirty_since(&self, version: &VersionHash) -> Option<BTreeSet<NodeId>> {
        let start = self.history.iter().rposition(|(v, _)| v == version)?;
        let mut dirty: BTreeSet<NodeId> =
            self.history[start + 1..].iter().flat_map(|(_, d)| d.iter().cloned()).collect();
        dirty.retain(|id| self.doc.contains(id));
        Some(dirty)
    }
}
