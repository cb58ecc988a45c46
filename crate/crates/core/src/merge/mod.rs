//! Merging two concurrent edit logs from a common base.
//!
//! The logs are put in a canonical order by replica id. The first log is
//! applied as recorded; each edit of the second is then rebased across the
//! whole first log and applied. Incompatible edits become [`Conflict`]s
//! whose option A is always the side of the smaller replica id, so the
//! argument order of [`merge`] never matters.

mod conflict;
mod rebase;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::edit::{EditLog, EditOp, LogEntry};
use crate::model::{Document, NodeId, ReplicaId};
use crate::store::{ReplayError, VersionHash};

pub use conflict::{Choice, Conflict, ConflictId, ConflictKind, ConflictOption, Policy, Prompt, Resolver};

#[derive(Clone, Debug)]
pub struct MergeOutcome {
    pub document: Document,
    /// Every edit applied to the base, in order. Replaying them over the
    /// base reproduces `document`.
    pub applied: Vec<EditOp>,
    pub conflicts: Vec<Conflict>,
    /// Computed values that need re-evaluation.
    pub dirty: BTreeSet<NodeId>,
    /// False when an interactive merge was abandoned at an unanswered
    /// conflict; the document is then partial and must not be published.
    pub complete: bool,
}

impl MergeOutcome {
    /// The first conflict still waiting for a choice.
    pub fn pending(&self) -> Option<&Conflict> {
        self.conflicts.iter().find(|c| c.resolution.is_none())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("log of {replica} is based on {log}, not on {base}")]
    VersionMismatch { replica: ReplicaId, log: VersionHash, base: VersionHash },
    #[error("both logs come from replica {0}")]
    SameReplica(ReplicaId),
    #[error("log of {replica} does not replay: {source}")]
    Replay { replica: ReplicaId, source: ReplayError },
    #[error("invalid custom choice for conflict {conflict}: {reason}")]
    InvalidChoice { conflict: ConflictId, reason: String },
}

/// Merges two logs, resolving every conflict with `resolver`.
pub fn merge(
    base: &Document,
    log_a: &EditLog,
    log_b: &EditLog,
    resolver: &impl Resolver,
) -> Result<MergeOutcome, MergeError> {
    rebase::run(base, log_a, log_b, &mut |c: &Conflict| Some(resolver.resolve(c)))
}

/// Merges two logs, asking `prompt` about each conflict in turn. If the
/// prompt closes, the outcome is returned incomplete.
pub fn merge_interactive(
    base: &Document,
    log_a: &EditLog,
    log_b: &EditLog,
    prompt: &mut impl Prompt,
) -> Result<MergeOutcome, MergeError> {
    rebase::run(base, log_a, log_b, &mut |c: &Conflict| prompt.ask(c))
}

/// An edit rebased across a concurrent sequence of edits.
#[derive(Clone, Debug)]
pub struct Transformed {
    /// What to apply after `against` so that the edit takes effect; empty if
    /// the edit is subsumed or dropped.
    pub ops: Vec<EditOp>,
    /// Conflicts met on the way. The edit's own side was taken; the choice
    /// is left open in the returned conflicts.
    pub conflicts: Vec<Conflict>,
}

/// Rebases `op` (by `op_replica`, against `base`) across `against` (by
/// `against_replica`), which is taken as already applied.
pub fn transform(
    base: &Document,
    op: &EditOp,
    op_replica: &ReplicaId,
    against: &[EditOp],
    against_replica: &ReplicaId,
) -> Result<Transformed, MergeError> {
    let version = VersionHash::of(base);
    let log = |replica: &ReplicaId, ops: &[EditOp]| EditLog {
        base_version: version.clone(),
        replica: replica.clone(),
        entries: ops.iter().enumerate().map(|(i, op)| LogEntry { ts: i as u64 + 1, op: op.clone() }).collect(),
    };
    let first = log(against_replica, against);
    let second = log(op_replica, std::slice::from_ref(op));
    let own_side = if op_replica < against_replica { Choice::TakeA } else { Choice::TakeB };
    let outcome = rebase::run_ordered(base, &first, &second, &mut |_: &Conflict| Some(own_side.clone()))?;
    let mut conflicts = outcome.conflicts;
    for c in &mut conflicts {
        if c.kind != ConflictKind::EditInapplicable {
            c.resolution = None;
        }
    }
    Ok(Transformed { ops: outcome.applied.into_iter().skip(against.len()).collect(), conflicts })
}

#[cfg(test)]
mod tests;
