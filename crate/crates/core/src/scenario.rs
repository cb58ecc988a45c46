//! The conference-organizer documents and edit sessions, used by the demo,
//! the fixtures and the tests.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::edit::{EditLog, EditOp, Editor, NodeSpec, Rejection, SortKey};
use crate::merge::{merge, MergeError, Policy};
use crate::model::{Document, Node, NodeId, NodeKind, ReplicaId};
use crate::store::{self, ReplayError, StoreError};

pub const BASE_REPLICA: &str = "base";

pub const SPEAKERS: [&str; 3] = [
    "Adele Goldberg, adele@xerox.com",
    "Margaret Hamilton, hamilton@mit.com",
    "Betty Jean Jennings, betty@rand.com",
];

pub const NEW_SPEAKER: &str = "Ada Lovelace, lovelace@rsoc.ac.uk";
pub const HEADERS: [&str; 3] = ["Name", "Email", "Organizer"];
/// Organizer initials for Adele, Margaret and Betty.
pub const ORGANIZERS: [&str; 3] = ["TP", "JE", "JE"];
pub const COUNT_FORMULA: &str = "=COUNT(/ul[id='speakers']/li)";
pub const EXPENSES_FORMULA: &str = "=/dl/dd[0] * /dl/dd[1]";

/// Node ids of the initial document.
#[derive(Clone, Debug)]
pub struct Ids {
    pub title: NodeId,
    pub heading: NodeId,
    pub speakers: NodeId,
    /// Adele, Margaret, Betty.
    pub speaker_items: Vec<NodeId>,
}

/// Node ids of the budget section.
#[derive(Clone, Debug)]
pub struct BudgetIds {
    pub speakers: NodeId,
    pub dl: NodeId,
    pub cost: NodeId,
    pub count: NodeId,
    pub expenses: NodeId,
}

fn replica(name: &str) -> ReplicaId {
    ReplicaId::new(name).expect("scenario replica names are valid")
}

/// The initial document: title, heading and the speakers list.
pub fn figure2() -> (Document, Ids) {
    let r = replica(BASE_REPLICA);
    let id = |c| NodeId::new(r.clone(), c);
    let items: Vec<Node> = SPEAKERS
        .iter()
        .enumerate()
        .map(|(i, s)| Node::new(id(4 + i as u64), NodeKind::ListItem).with_text(*s))
        .collect();
    let root = Node::new(id(0), NodeKind::Document).with_children(vec![
        Node::new(id(1), NodeKind::Heading).with_text("PROGRAMMING CONFERENCE 2023"),
        Node::new(id(2), NodeKind::Heading).with_text("Invited speakers"),
        Node::new(id(3), NodeKind::List).with_user_id("speakers").with_children(items),
    ]);
    let doc = Document::from_root(root).expect("initial document is valid");
    let ids = Ids { title: id(1), heading: id(2), speakers: id(3), speaker_items: (4..7).map(id).collect() };
    (doc, ids)
}

/// First organizer: add a speaker at the top, then sort by first name.
pub fn add_and_sort(editor: &mut Editor, ids: &Ids) -> Result<NodeId, Rejection> {
    let ada = editor.insert(&ids.speakers, 0, NodeSpec::text(NodeKind::ListItem, NEW_SPEAKER))?;
    editor.sort(&ids.speakers, SortKey::FIRST_WORD)?;
    Ok(ada)
}

/// Second organizer: refactor the list into a table with an Organizer
/// column, then fill in who contacts whom.
pub fn tabulate(editor: &mut Editor, ids: &Ids) -> Result<(), Rejection> {
    editor.refactor_list_to_table(&ids.speakers, ",", &HEADERS, "")?;
    for (row, initials) in ids.speaker_items.iter().zip(ORGANIZERS) {
        let cell = editor.doc().find(row).and_then(|r| r.children.get(2)).map(|c| c.id.clone());
        let cell = cell.ok_or_else(|| Rejection::MissingTarget(row.clone()))?;
        editor.set_text(&cell, initials)?;
    }
    Ok(())
}

/// The refactoring of the speakers list as a single composite edit.
pub fn refactor_op(doc: &Document, list: &NodeId, replica_name: &str) -> EditOp {
    let mut editor = Editor::new(doc.clone(), replica(replica_name));
    editor.refactor_list_to_table(list, ",", &HEADERS, "").expect("list refactors");
    editor.log().entries[0].op.clone()
}

/// Appends the budget section.
pub fn add_budget(editor: &mut Editor) -> Result<BudgetIds, Rejection> {
    let root = editor.doc().root().id.clone();
    let speakers = editor.doc().find_by_user_id("speakers").map(|n| n.id.clone());
    let speakers = speakers.ok_or_else(|| Rejection::Malformed("no speakers list".into()))?;
    editor.append(&root, NodeSpec::text(NodeKind::Heading, "Conference budget"))?;
    let dl = editor.append(&root, NodeSpec::new(NodeKind::DefList))?;
    editor.append(&dl, NodeSpec::text(NodeKind::DefTerm, "Travel cost per speaker:"))?;
    let cost = editor.append(&dl, NodeSpec::text(NodeKind::DefValue, "$1200"))?;
    editor.append(&dl, NodeSpec::text(NodeKind::DefTerm, "Number of speakers:"))?;
    let count_dd = editor.append(&dl, NodeSpec::new(NodeKind::DefValue))?;
    let count = editor.append(&count_dd, NodeSpec::computed(COUNT_FORMULA))?;
    editor.append(&dl, NodeSpec::text(NodeKind::DefTerm, "Travel expenses:"))?;
    let expenses_dd = editor.append(&dl, NodeSpec::new(NodeKind::DefValue))?;
    let expenses = editor.append(&expenses_dd, NodeSpec::computed(EXPENSES_FORMULA))?;
    Ok(BudgetIds { speakers, dl, cost, count, expenses })
}

/// The initial document with the budget section added.
pub fn figure6() -> (Document, BudgetIds) {
    let (base, _) = figure2();
    let mut editor = Editor::new(base, replica("org2"));
    let ids = add_budget(&mut editor).expect("budget applies");
    (editor.doc().clone(), ids)
}

/// The edit logs of one run of the scenario.
#[derive(Clone, Debug)]
pub struct Logs {
    /// Add a speaker and sort.
    pub add_and_sort: EditLog,
    /// Refactor into a table and assign organizers.
    pub tabulate: EditLog,
    /// Both of the above by one replica.
    pub add_sort_tabulate: EditLog,
    /// Add the budget section.
    pub budget: EditLog,
}

/// Records every session; `first` plays the first organizer, `second` the
/// second one.
pub fn logs(first: &str, second: &str) -> Logs {
    let (base, ids) = figure2();
    let session = |name: &str, f: &dyn Fn(&mut Editor) -> Result<(), Rejection>| {
        let mut editor = Editor::new(base.clone(), replica(name));
        f(&mut editor).expect("scenario edits apply");
        editor.into_parts().1
    };
    Logs {
        add_and_sort: session(first, &|e| add_and_sort(e, &ids).map(|_| ())),
        tabulate: session(second, &|e| tabulate(e, &ids)),
        add_sort_tabulate: session(first, &|e| {
            add_and_sort(e, &ids)?;
            tabulate(e, &ids)
        }),
        budget: session(second, &|e| add_budget(e).map(|_| ())),
    }
}

pub const FIGURES: [&str; 6] = ["fig2", "fig3", "fig4", "fig5", "fig6", "fig7"];

pub fn fixture_files() -> [&'static str; 5] {
    ["fig2.json", "add-and-sort.jsonl", "tabulate.jsonl", "add-sort-tabulate.jsonl", "budget.jsonl"]
}

/// Writes the base document and the edit logs (first organizer `org1`,
/// second `org2`).
pub fn write_fixtures(dir: &Path) -> Result<(), StoreError> {
    let (base, _) = figure2();
    let logs = logs("org1", "org2");
    store::save_document(&base, &dir.join("fig2.json"))?;
    store::write_log(&dir.join("add-and-sort.jsonl"), &logs.add_and_sort)?;
    store::write_log(&dir.join("tabulate.jsonl"), &logs.tabulate)?;
    store::write_log(&dir.join("add-sort-tabulate.jsonl"), &logs.add_sort_tabulate)?;
    store::write_log(&dir.join("budget.jsonl"), &logs.budget)?;
    Ok(())
}

/// The fixture directory of this source tree.
pub fn default_fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("replaying {log}: {source}")]
    Replay { log: String, source: ReplayError },
    #[error("merging: {0}")]
    Merge(#[from] MergeError),
    #[error("{path}: {source}")]
    Golden { path: PathBuf, source: std::io::Error },
}

/// One figure compared against its golden rendering.
#[derive(Clone, Debug)]
pub struct FigureReport {
    pub name: &'static str,
    pub expected: String,
    pub actual: String,
}

impl FigureReport {
    pub fn ok(&self) -> bool {
        self.expected == self.actual
    }

    /// Line-by-line differences, `-` expected and `+` actual.
    pub fn diff(&self) -> String {
        let expected: Vec<&str> = self.expected.lines().collect();
        let actual: Vec<&str> = self.actual.lines().collect();
        let mut out = String::new();
        for i in 0..expected.len().max(actual.len()) {
            match (expected.get(i), actual.get(i)) {
                (Some(e), Some(a)) if e == a => {}
                (e, a) => {
                    if let Some(e) = e {
                        out.push_str(&format!("-{e}\n"));
                    }
                    if let Some(a) = a {
                        out.push_str(&format!("+{a}\n"));
                    }
                }
            }
        }
        out
    }
}

/// Rebuilds every figure from the fixtures in `dir` and compares it with the
/// golden `figN.txt` rendering. Merged figures are computed with the logs in
/// both argument orders; a mismatch in either shows up in `actual`.
pub fn run_demo(dir: &Path) -> Result<Vec<FigureReport>, DemoError> {
    let base = store::load_document(&dir.join("fig2.json"))?;
    let load = |name: &str| store::read_log(&dir.join(name));
    let replay = |name: &str, log: &EditLog| {
        store::replay(&base, log).map_err(|source| DemoError::Replay { log: name.to_string(), source })
    };
    let add_and_sort = load("add-and-sort.jsonl")?;
    let tabulate = load("tabulate.jsonl")?;
    let add_sort_tabulate = load("add-sort-tabulate.jsonl")?;
    let budget = load("budget.jsonl")?;

    let merged = |a: &EditLog, b: &EditLog| -> Result<String, DemoError> {
        let forward = merge(&base, a, b, &Policy::PreferA)?.document.render();
        let backward = merge(&base, b, a, &Policy::PreferA)?.document.render();
        Ok(if forward == backward { forward } else { format!("{forward}(argument order changed the result)\n{backward}") })
    };
    let actual = [
        base.render(),
        replay("add-and-sort.jsonl", &add_and_sort)?.render(),
        replay("tabulate.jsonl", &tabulate)?.render(),
        merged(&add_and_sort, &tabulate)?,
        replay("budget.jsonl", &budget)?.render(),
        merged(&add_sort_tabulate, &budget)?,
    ];
    FIGURES
        .iter()
        .zip(actual)
        .map(|(name, actual)| {
            let path = dir.join(format!("{name}.txt"));
            let expected = fs::read_to_string(&path).map_err(|source| DemoError::Golden { path, source })?;
            Ok(FigureReport { name, expected, actual })
        })
        .collect()
}
