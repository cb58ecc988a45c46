//! Absolute path selectors such as `/ul[id='speakers']/li` or `/dl/dd[0]`.
//!
//! A selector is a union of paths (`/ul/li|/table/tbody/tr`). Hand-written
//! selectors are normally a single path; unions appear when a structure edit
//! splits what one path used to denote. A selector with no paths is a
//! dangling reference and prints as `#REF`.

mod rewrite;

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::model::{Document, Node, NodeId, NodeKind};

pub use rewrite::{rewrite_selector, rewrite_selector_between, Rewrite};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predicate {
    None,
    UserId(String),
    /// Position among the kind-matching siblings.
    Index(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Step {
    pub kind: NodeKind,
    pub pred: Predicate,
}

impl Step {
    pub fn new(kind: NodeKind, pred: Predicate) -> Self {
        Step { kind, pred }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    pub steps: Vec<Step>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Selector {
    pub paths: Vec<Path>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectorError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown tag {tag:?} at offset {offset}")]
    UnknownTag { offset: usize, tag: String },
}

impl SelectorError {
    pub fn offset(&self) -> usize {
        match self {
            SelectorError::Syntax { offset, .. } | SelectorError::UnknownTag { offset, .. } => *offset,
        }
    }
}

impl Selector {
    pub fn single(steps: Vec<Step>) -> Self {
        Selector { paths: vec![Path { steps }] }
    }

    pub fn dangling() -> Self {
        Selector { paths: Vec::new() }
    }

    pub fn is_dangling(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn parse(src: &str) -> Result<Self, SelectorError> {
        let (sel, end) = parse_at(src, 0)?;
        if end != src.len() {
            return Err(syntax(end, "unexpected trailing input"));
        }
        Ok(sel)
    }

    /// Node ids denoted by the selector, in document order.
    pub fn resolve(&self, doc: &Document) -> Vec<NodeId> {
        match self.paths.as_slice() {
            [] => Vec::new(),
            [only] => only.resolve(doc).into_iter().map(|n| n.id.clone()).collect(),
            many => {
                let wanted: HashSet<&NodeId> =
                    many.iter().flat_map(|p| p.resolve(doc)).map(|n| &n.id).collect();
                doc.nodes().filter(|n| wanted.contains(&n.id)).map(|n| n.id.clone()).collect()
            }
        }
    }
}

impl Path {
    pub fn resolve<'d>(&self, doc: &'d Document) -> Vec<&'d Node> {
        self.levels(doc).pop().map(|l| l.matched).unwrap_or_default()
    }

    /// Per-step resolution: the nodes each step was applied to and the nodes
    /// it matched.
    pub(crate) fn levels<'d>(&self, doc: &'d Document) -> Vec<Level<'d>> {
        let mut current = vec![doc.root()];
        let mut levels = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            let matched = match_step(&current, step);
            levels.push(Level { parents: current, matched: matched.clone() });
            current = matched;
        }
        levels
    }
}

pub(crate) struct Level<'d> {
    pub parents: Vec<&'d Node>,
    pub matched: Vec<&'d Node>,
}

fn match_step<'d>(parents: &[&'d Node], step: &Step) -> Vec<&'d Node> {
    let mut out = Vec::new();
    for parent in parents {
        let mut candidates = parent.children.iter().filter(|c| c.kind == step.kind);
        match &step.pred {
            Predicate::None => out.extend(candidates),
            Predicate::UserId(uid) => out.extend(candidates.filter(|c| c.user_id.as_deref() == Some(uid))),
            Predicate::Index(i) => out.extend(candidates.nth(*i)),
        }
    }
    out
}

/// Position of `node` among its parent's children of the same kind.
pub(crate) fn kind_index(parent: &Node, id: &NodeId) -> Option<usize> {
    let node = parent.children.iter().find(|c| &c.id == id)?;
    parent.children.iter().filter(|c| c.kind == node.kind).position(|c| &c.id == id)
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::None => Ok(()),
            Predicate::UserId(uid) => write!(f, "[id='{uid}']"),
            Predicate::Index(i) => write!(f, "[{i}]"),
        }
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for step in &self.steps {
            write!(f, "/{}{}", step.kind.tag(), step.pred)?;
        }
        Ok(())
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.paths.is_empty() {
            return f.write_str("#REF");
        }
        for (i, path) in self.paths.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{path}")?;
        }
        Ok(())
    }
}

fn syntax(offset: usize, message: &str) -> SelectorError {
    SelectorError::Syntax { offset, message: message.to_string() }
}

/// Parses a selector starting at byte `start`; returns it with the offset
/// just past its last character. Used by the formula parser as well.
pub(crate) fn parse_at(src: &str, start: usize) -> Result<(Selector, usize), SelectorError> {
    let bytes = src.as_bytes();
    if src[start..].starts_with("#REF") {
        return Ok((Selector::dangling(), start + 4));
    }
    let mut pos = start;
    let mut paths = Vec::new();
    loop {
        let mut steps = Vec::new();
        while bytes.get(pos) == Some(&b'/') {
            pos += 1;
            let tag_start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_alphabetic) {
                pos += 1;
            }
            if pos == tag_start {
                return Err(syntax(pos, "expected a tag name"));
            }
            let tag = &src[tag_start..pos];
            let kind = NodeKind::from_tag(tag)
                .filter(|k| k.is_selectable())
                .ok_or_else(|| SelectorError::UnknownTag { offset: tag_start, tag: tag.to_string() })?;
            let mut pred = Predicate::None;
            if bytes.get(pos) == Some(&b'[') {
                let (p, end) = parse_predicate(src, pos)?;
                pred = p;
                pos = end;
            }
            steps.push(Step { kind, pred });
        }
        if steps.is_empty() {
            return Err(syntax(pos, "expected '/'"));
        }
        paths.push(Path { steps });
        if bytes.get(pos) == Some(&b'|') {
            pos += 1;
        } else {
            break;
        }
    }
    Ok((Selector { paths }, pos))
}

/// Parses `[id='...']` or `[N]` at `open` (the `[`). Errors are reported at
/// the opening bracket.
fn parse_predicate(src: &str, open: usize) -> Result<(Predicate, usize), SelectorError> {
    let rest = &src[open + 1..];
    let bad = || syntax(open, "malformed predicate");
    if let Some(after) = rest.strip_prefix("id='") {
        let close = after.find('\'').ok_or_else(bad)?;
        let uid = &after[..close];
        if uid.is_empty() || !after[close + 1..].starts_with(']') {
            return Err(bad());
        }
        let end = open + 1 + 4 + close + 2;
        return Ok((Predicate::UserId(uid.to_string()), end));
    }
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || rest.as_bytes().get(digits) != Some(&b']') {
        return Err(bad());
    }
    let index = rest[..digits].parse().map_err(|_| bad())?;
    Ok((Predicate::Index(index), open + 1 + digits + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_speakers_selector() {
        let sel = Selector::parse("/ul[id='speakers']/li").unwrap();
        assert_eq!(
            sel,
            Selector::single(vec![
                Step::new(NodeKind::List, Predicate::UserId("speakers".into())),
                Step::new(NodeKind::ListItem, Predicate::None),
            ])
        );
    }

    #[test]
    fn parses_index_selector() {
        let sel = Selector::parse("/dl/dd[0]").unwrap();
        assert_eq!(
            sel,
            Selector::single(vec![
                Step::new(NodeKind::DefList, Predicate::None),
                Step::new(NodeKind::DefValue, Predicate::Index(0)),
            ])
        );
    }

    #[test]
    fn unterminated_predicate_reports_bracket_offset() {
        let err = Selector::parse("/ul[").unwrap_err();
        assert_eq!(err.offset(), 3);
        assert!(matches!(err, SelectorError::Syntax { .. }));
    }

    #[test]
    fn rejects_unknown_tags_and_whitespace() {
        assert_eq!(
            Selector::parse("/div").unwrap_err(),
            SelectorError::UnknownTag { offset: 1, tag: "div".into() }
        );
        assert!(matches!(Selector::parse("/computed"), Err(SelectorError::UnknownTag { .. })));
        assert!(Selector::parse("/ul /li").is_err());
        assert!(Selector::parse("").is_err());
        assert!(Selector::parse("/ul[id='']").is_err());
        assert!(Selector::parse("/ul[x]").is_err());
    }

    #[test]
    fn unions_and_dangling() {
        let sel = Selector::parse("/ul/li|/table/tbody/tr").unwrap();
        assert_eq!(sel.paths.len(), 2);
        assert_eq!(sel.to_string(), "/ul/li|/table/tbody/tr");
        assert!(Selector::parse("#REF").unwrap().is_dangling());
    }

    fn step_strategy() -> impl Strategy<Value = Step> {
        let kinds: Vec<NodeKind> = NodeKind::ALL.into_iter().filter(|k| k.is_selectable()).collect();
        let pred = prop_oneof![
            Just(Predicate::None),
            "[a-z][a-z0-9_-]{0,6}".prop_map(Predicate::UserId),
            (0usize..20).prop_map(Predicate::Index),
        ];
        (proptest::sample::select(kinds), pred).prop_map(|(kind, pred)| Step { kind, pred })
    }

    fn selector_strategy() -> impl Strategy<Value = Selector> {
        let path = proptest::collection::vec(step_strategy(), 1..5).prop_map(|steps| Path { steps });
        proptest::collection::vec(path, 0..3).prop_map(|paths| Selector { paths })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(sel in selector_strategy()) {
            let printed = sel.to_string();
            prop_assert_eq!(Selector::parse(&printed).unwrap(), sel);
        }
    }
}
