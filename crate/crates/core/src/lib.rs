//! Structure-aware merging of block documents with computed values.
//!
//! A [`Document`] is a tree of typed blocks. Replicas record [`EditOp`]s in
//! an [`EditLog`] against a shared base; [`merge`] reconciles two logs,
//! rewriting the selectors inside formulas so they keep denoting the same
//! nodes after structural edits.

pub mod edit;
pub mod formula;
pub mod merge;
pub mod model;
pub mod scenario;
pub mod selector;
pub mod store;

pub use edit::{apply, EditLog, EditOp, Editor, PrimitiveEdit, Rejection};
pub use formula::{Formula, Value};
pub use merge::{merge, merge_interactive, transform, Choice, Conflict, ConflictKind, MergeError, MergeOutcome, Policy};
pub use model::{Document, Node, NodeId, NodeKind, ReplicaId};
pub use selector::Selector;
pub use store::VersionHash;
