use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use blockmerge::formula::recompute;
use blockmerge::merge::{merge, merge_interactive, Choice, Conflict, ConflictKind, MergeOutcome, Policy};
use blockmerge::scenario::{self, run_demo};
use blockmerge::store;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "blockmerge", version, about = "Merge structure edits of block documents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rebuild the conference figures from the fixtures and compare them with
    /// the golden renderings.
    Demo {
        #[arg(long, env = blockmerge_service::FIXTURES_ENV)]
        fixtures: Option<PathBuf>,
    },
    /// Merge two edit logs made against the same base document.
    Merge {
        base: PathBuf,
        log_a: PathBuf,
        log_b: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyArg::PreferA)]
        policy: PolicyArg,
        /// Print the merged document as canonical JSON instead of rendering it.
        #[arg(long)]
        json: bool,
        /// Also write the merged document (canonical JSON) here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the conflict report (JSON) here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render a document as plain text.
    Render { doc: PathBuf },
    /// Replay a log over its base and print the canonical JSON result.
    Replay { base: PathBuf, log: PathBuf },
    /// Serve the HTTP interface.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, env = blockmerge_service::FIXTURES_ENV)]
        fixtures: Option<PathBuf>,
    },
    /// Write the scenario's base document and edit logs.
    GenFixtures {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    PreferA,
    PreferB,
    FailOnConflict,
    Prompt,
}

/// Exit status for merges that stopped at conflicts.
const CONFLICTS: u8 = 2;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn fixture_dir(arg: Option<PathBuf>) -> PathBuf {
    arg.unwrap_or_else(scenario::default_fixture_dir)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Demo { fixtures } => demo(&fixture_dir(fixtures)),
        Command::Merge { base, log_a, log_b, policy, json, out, report } => {
            merge_files(&base, &log_a, &log_b, policy, json, out.as_deref(), report.as_deref())
        }
        Command::Render { doc } => {
            print!("{}", store::load_document(&doc)?.render());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { base, log } => {
            let doc = store::replay(&store::load_document(&base)?, &store::read_log(&log)?)?;
            print!("{}", doc.to_canonical_json());
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { addr, fixtures } => {
            let state = blockmerge_service::AppState::new(Some(fixture_dir(fixtures)))?;
            let runtime = tokio::runtime::Runtime::new()?;
            eprintln!("listening on {addr}");
            runtime.block_on(blockmerge_service::serve(&addr, state))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::GenFixtures { dir } => {
            let dir = fixture_dir(dir);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            scenario::write_fixtures(&dir)?;
            println!("wrote {} files to {}", scenario::fixture_files().len(), dir.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn demo(dir: &Path) -> Result<ExitCode> {
    let reports = run_demo(dir)?;
    let mut ok = true;
    for report in &reports {
        let label = report.name.replace("fig", "Fig.");
        if report.ok() {
            println!("{label} OK");
        } else {
            ok = false;
            println!("{label} MISMATCH");
            print!("{}", report.diff());
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn merge_files(
    base: &Path,
    log_a: &Path,
    log_b: &Path,
    policy: PolicyArg,
    json: bool,
    out: Option<&Path>,
    report: Option<&Path>,
) -> Result<ExitCode> {
    let base = store::load_document(base)?;
    let (a, b) = (store::read_log(log_a)?, store::read_log(log_b)?);
    let outcome = match policy {
        PolicyArg::PreferA | PolicyArg::FailOnConflict => merge(&base, &a, &b, &Policy::PreferA)?,
        PolicyArg::PreferB => merge(&base, &a, &b, &Policy::PreferB)?,
        PolicyArg::Prompt => {
            let stdin = io::stdin();
            let mut lines = stdin.lock().lines();
            merge_interactive(&base, &a, &b, &mut |c: &Conflict| ask(c, &mut lines))?
        }
    };
    if let Some(path) = report {
        let listing = serde_json::to_string_pretty(&outcome.conflicts)?;
        fs::write(path, listing + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    for c in &outcome.conflicts {
        eprintln!("{}", describe(c));
    }
    let failed = matches!(policy, PolicyArg::FailOnConflict)
        && outcome.conflicts.iter().any(|c| c.kind != ConflictKind::EditInapplicable);
    if failed || !outcome.complete {
        eprintln!("merge stopped: {} conflict(s)", outcome.conflicts.len());
        return Ok(ExitCode::from(CONFLICTS));
    }
    publish(&outcome, json, out)?;
    Ok(ExitCode::SUCCESS)
}

fn publish(outcome: &MergeOutcome, json: bool, out: Option<&Path>) -> Result<()> {
    let doc = recompute(&outcome.document, &outcome.dirty)?;
    if let Some(path) = out {
        store::save_document(&doc, path)?;
    }
    let mut stdout = io::stdout().lock();
    if json {
        stdout.write_all(doc.to_canonical_json().as_bytes())?;
    } else {
        stdout.write_all(doc.render().as_bytes())?;
    }
    Ok(())
}

fn describe(c: &Conflict) -> String {
    let resolution = match &c.resolution {
        Some(Choice::TakeA) => "took a".to_string(),
        Some(Choice::TakeB) => "took b".to_string(),
        Some(Choice::Custom(v)) => format!("custom {v}"),
        None => "unresolved".to_string(),
    };
    format!(
        "conflict {} {} at {}: a ({}) {}; b ({}) {}; {resolution}",
        c.conflict_id, c.kind, c.site, c.option_a.replica, c.option_a.description, c.option_b.replica, c.option_b.description
    )
}

/// Asks about one conflict on the terminal. `a` and `b` pick a side, `=text`
/// sets a custom value and anything else is parsed as a JSON payload.
fn ask(c: &Conflict, lines: &mut impl Iterator<Item = io::Result<String>>) -> Option<Choice> {
    eprintln!("{} at {}", c.kind, c.site);
    eprintln!("  a) {}: {}", c.option_a.replica, c.option_a.description);
    eprintln!("  b) {}: {}", c.option_b.replica, c.option_b.description);
    loop {
        eprint!("choice [a/b/=value/json]: ");
        let line = lines.next()?.ok()?;
        let line = line.trim();
        match line {
            "a" => return Some(Choice::TakeA),
            "b" => return Some(Choice::TakeB),
            _ => {
                if let Some(text) = line.strip_prefix('=') {
                    return Some(Choice::Custom(serde_json::Value::String(text.to_string())));
                }
                match serde_json::from_str(line) {
                    Ok(payload) => return Some(Choice::Custom(payload)),
                    Err(_) => eprintln!("not understood: {line}"),
                }
            }
        }
    }
}
