use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{NodeId, ReplicaId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictKind {
    ConcurrentSetValue,
    RemoveVsEdit,
    SplitVsSetValue,
    SortVsSort,
    FormulaRewriteAmbiguous,
    /// An edit that no longer applies after the other side's edits. Always
    /// resolved by dropping the edit.
    EditInapplicable,
}

impl ConflictKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConflictKind::ConcurrentSetValue => "concurrent-set-value",
            ConflictKind::RemoveVsEdit => "remove-vs-edit",
            ConflictKind::SplitVsSetValue => "split-vs-set-value",
            ConflictKind::SortVsSort => "sort-vs-sort",
            ConflictKind::FormulaRewriteAmbiguous => "formula-rewrite-ambiguous",
            ConflictKind::EditInapplicable => "edit-inapplicable",
        }
    }
}

impl fmt::Display for ConflictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One side of a conflict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictOption {
    pub replica: ReplicaId,
    pub description: String,
    /// The value this side wants (a string for value conflicts), or the
    /// edits it would apply.
    pub payload: serde_json::Value,
}

/// Content hash of a conflict, stable across runs and argument orders.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConflictId(pub String);

impl fmt::Display for ConflictId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "choice", content = "payload", rename_all = "kebab-case")]
pub enum Choice {
    TakeA,
    TakeB,
    /// A string for value conflicts, otherwise a JSON array of edits to
    /// apply instead of either side.
    Custom(serde_json::Value),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Conflict {
    pub conflict_id: ConflictId,
    pub kind: ConflictKind,
    pub site: NodeId,
    /// The side of the replica with the smaller id.
    pub option_a: ConflictOption,
    pub option_b: ConflictOption,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Choice>,
}

impl Conflict {
    pub(crate) fn new(kind: ConflictKind, site: NodeId, x: ConflictOption, y: ConflictOption) -> Self {
        let (option_a, option_b) = if x.replica <= y.replica { (x, y) } else { (y, x) };
        let content = serde_json::json!([kind, site.to_string(), option_a, option_b]);
        let digest = Sha256::digest(content.to_string().as_bytes());
        let conflict_id = ConflictId(hex::encode(&digest[..8]));
        Conflict { conflict_id, kind, site, option_a, option_b, resolution: None }
    }
}

/// Non-interactive conflict resolution. Implementations must decide from the
/// conflict's content alone.
pub trait Resolver {
    fn resolve(&self, conflict: &Conflict) -> Choice;
}

/// Fixed resolution policies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    /// Take the side of the replica with the smaller id.
    PreferA,
    PreferB,
}

impl Resolver for Policy {
    fn resolve(&self, _: &Conflict) -> Choice {
        match self {
            Policy::PreferA => Choice::TakeA,
            Policy::PreferB => Choice::TakeB,
        }
    }
}

impl<F: Fn(&Conflict) -> Choice> Resolver for F {
    fn resolve(&self, conflict: &Conflict) -> Choice {
        self(conflict)
    }
}

/// Interactive conflict resolution: `None` means the channel closed.
pub trait Prompt {
    fn ask(&mut self, conflict: &Conflict) -> Option<Choice>;
}

impl<F: FnMut(&Conflict) -> Option<Choice>> Prompt for F {
    fn ask(&mut self, conflict: &Conflict) -> Option<Choice> {
        self(conflict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn option(replica: &str, text: &str) -> ConflictOption {
        ConflictOption {
            replica: ReplicaId::new(replica).unwrap(),
            description: format!("set to {text:?}"),
            payload: serde_json::json!(text),
        }
    }

    #[test]
    fn options_are_ordered_by_replica() {
        let site = NodeId::new(ReplicaId::new("base").unwrap(), 4);
        let c1 = Conflict::new(ConflictKind::ConcurrentSetValue, site.clone(), option("org2", "y"), option("org1", "x"));
        let c2 = Conflict::new(ConflictKind::ConcurrentSetValue, site, option("org1", "x"), option("org2", "y"));
        assert_eq!(c1, c2);
        assert_eq!(c1.option_a.replica.as_str(), "org1");
        assert_eq!(c1.conflict_id.0.len(), 16);
    }

    #[test]
    fn wire_format() {
        let site = NodeId::new(ReplicaId::new("base").unwrap(), 4);
        let c = Conflict::new(ConflictKind::SortVsSort, site, option("a", "x"), option("b", "y"));
        let json = serde_json::to_value(&c).unwrap();
        for field in ["conflictId", "kind", "site", "optionA", "optionB"] {
            assert!(json.get(field).is_some(), "{field}");
        }
        assert_eq!(json["kind"], "sort-vs-sort");
        assert_eq!(serde_json::to_value(Choice::TakeB).unwrap(), serde_json::json!({"choice": "take-b"}));
        let custom: Choice = serde_json::from_str(r#"{"choice":"custom","payload":"z"}"#).unwrap();
        assert_eq!(custom, Choice::Custom(serde_json::json!("z")));
    }
}
