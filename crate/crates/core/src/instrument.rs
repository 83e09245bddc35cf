//! Source rewriting that wraps target methods with entry and exit probes.
//!
//! Every inserted fragment is enclosed in `/*@probe{*/ ... /*}@probe*/`, so
//! removing those segments restores the original bytes exactly. A target
//! method becomes:
//!
//! ```text
//! pub fn getName(p: int) -> string {/*@probe{*/ let __probe = probe_enter("fonts.NamingTable.getName/1", this, [p]); /*}@probe*/
//!     if (p < 0) { return /*@probe{*/probe_exit(__probe, /*}@probe*/"?"/*@probe{*/)/*}@probe*/; }
//!     ...
//! /*@probe{*/ probe_exit(__probe, null); /*}@probe*/}
//! ```
//!
//! `probe_exit` returns its second argument, so the method's observable result
//! is unchanged. A throw skips the exit probe and nothing is recorded.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use prodcarve_lang::ast::{line_col, walk_stmts, FnDecl, Stmt};
use prodcarve_lang::lexer::quote_string;
use prodcarve_lang::project::{copy_tree, read_sources};
use prodcarve_lang::{Diagnostic, Program, ProjectError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::MethodId;

pub const OPEN: &str = "/*@probe{*/";
pub const CLOSE: &str = "/*}@probe*/";
pub const PROBE_VAR: &str = "__probe";
pub const MANIFEST_FILE: &str = "instrumentation-manifest.json";

#[derive(Debug, Error)]
pub enum InstrumentError {
    #[error("target {0} does not resolve to a public instance method of the subject")]
    UnresolvedTarget(MethodId),
    #[error("subject does not compile: {}", render_diags(.0))]
    Compile(Vec<Diagnostic>),
    #[error("tree contains no probes")]
    NotInstrumented,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub(crate) fn render_diags(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

impl From<ProjectError> for InstrumentError {
    fn from(e: ProjectError) -> Self {
        match e {
            ProjectError::Io { path, source } => InstrumentError::Io { path: path.display().to_string(), source },
            ProjectError::Compile(d) => InstrumentError::Compile(d),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InstrumentationPlan {
    pub targets: Vec<MethodId>,
    pub subject_root: PathBuf,
    pub output_root: PathBuf,
    /// Where to write the manifest; `None` skips it.
    pub manifest_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSite {
    pub method: MethodId,
    pub file: String,
    /// 1-based line of the method body's opening brace in the original file.
    pub entry_line: usize,
    /// 1-based lines of every `return` in the original file.
    pub return_lines: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTarget {
    pub method: MethodId,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentationManifest {
    pub probes: Vec<ProbeSite>,
    pub skipped: Vec<SkippedTarget>,
}

/// Instruments in memory. Returns the rewritten sources (same order and paths)
/// and the manifest.
pub fn instrument_sources(
    sources: &[(String, String)],
    targets: &[MethodId],
) -> Result<(Vec<(String, String)>, InstrumentationManifest), InstrumentError> {
    let program = Program::build(sources.to_vec()).map_err(InstrumentError::Compile)?;
    let mut manifest = InstrumentationManifest::default();
    let mut edits: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for target in targets {
        let entry = program
            .class(&target.class)
            .filter(|c| c.container == target.container)
            .ok_or_else(|| InstrumentError::UnresolvedTarget(target.clone()))?;
        let decl = entry
            .decl
            .methods
            .iter()
            .find(|m| m.name == target.method && m.is_pub && !m.is_static && m.params.len() == target.arity)
            .ok_or_else(|| InstrumentError::UnresolvedTarget(target.clone()))?;
        let file = &program.files[entry.file];
        let body = &file.text[decl.body.span.start..decl.body.span.end];
        let conflict = if file.text.contains(OPEN) || file.text.contains(CLOSE) {
            Some("file already contains probe markers".to_string())
        } else if body.contains(PROBE_VAR) {
            Some(format!("method body already uses the name `{PROBE_VAR}`"))
        } else if edits.get(&file.path).is_some_and(|e| e.iter().any(|(o, _)| *o == decl.body.span.start + 1)) {
            Some("target listed twice".to_string())
        } else {
            None
        };
        if let Some(reason) = conflict {
            manifest.skipped.push(SkippedTarget { method: target.clone(), reason });
            continue;
        }
        let (site, method_edits) = probe_edits(target, decl, &file.text, &file.path);
        manifest.probes.push(site);
        edits.entry(file.path.clone()).or_default().extend(method_edits);
    }
    let out: Vec<(String, String)> = sources
        .iter()
        .map(|(path, text)| match edits.get_mut(path) {
            Some(e) => (path.clone(), apply_edits(text, e)),
            None => (path.clone(), text.clone()),
        })
        .collect();
    Program::build(out.clone()).map_err(InstrumentError::Compile)?;
    Ok((out, manifest))
}

fn probe_edits(id: &MethodId, decl: &FnDecl, text: &str, path: &str) -> (ProbeSite, Vec<(usize, String)>) {
    let params: Vec<&str> = decl.params.iter().map(|p| p.name.as_str()).collect();
    let mut edits = vec![(
        decl.body.span.start + 1,
        format!(
            "{OPEN} let {PROBE_VAR} = probe_enter({}, this, [{}]); {CLOSE}",
            quote_string(&id.to_string()),
            params.join(", ")
        ),
    )];
    let mut return_lines = Vec::new();
    walk_stmts(&decl.body, &mut |s| {
        if let Stmt::Return { value, span } = s {
            return_lines.push(line_col(text, span.start).0);
            match value {
                Some(e) => {
                    edits.push((e.span.start, format!("{OPEN}probe_exit({PROBE_VAR}, {CLOSE}")));
                    edits.push((e.span.end, format!("{OPEN}){CLOSE}")));
                }
                None => edits.push((span.start, format!("{OPEN}probe_exit({PROBE_VAR}, null); {CLOSE}"))),
            }
        }
    });
    edits.push((decl.body.span.end - 1, format!("{OPEN} probe_exit({PROBE_VAR}, null); {CLOSE}")));
    let site = ProbeSite {
        method: id.clone(),
        file: path.to_string(),
        entry_line: line_col(text, decl.body.span.start).0,
        return_lines,
    };
    (site, edits)
}

fn apply_edits(text: &str, edits: &mut [(usize, String)]) -> String {
    // Stable sort keeps insertion order for fragments at the same offset.
    edits.sort_by_key(|(offset, _)| *offset);
    let mut out = String::with_capacity(text.len() + edits.iter().map(|(_, s)| s.len()).sum::<usize>());
    let mut last = 0;
    for (offset, insert) in edits.iter() {
        out.push_str(&text[last..*offset]);
        out.push_str(insert);
        last = *offset;
    }
    out.push_str(&text[last..]);
    out
}

/// Removes every probe segment. `None` when the text has none.
pub fn strip_text(text: &str) -> Option<String> {
    if !text.contains(OPEN) {
        return None;
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find(OPEN) {
        out.push_str(&rest[..start]);
        match rest[start..].find(CLOSE) {
            Some(end) => rest = &rest[start + end + CLOSE.len()..],
            None => {
                rest = "";
                break;
            }
        }
    }
    out.push_str(rest);
    Some(out)
}

/// Copies the subject to `plan.output_root` with probes applied to the targets.
pub fn apply_probes(plan: &InstrumentationPlan) -> Result<InstrumentationManifest, InstrumentError> {
    let sources = read_sources(&plan.subject_root)?;
    let (rewritten, manifest) = instrument_sources(&sources, &plan.targets)?;
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| InstrumentError::Io { path, source }
    };
    if plan.output_root.exists() {
        std::fs::remove_dir_all(&plan.output_root).map_err(io(&plan.output_root))?;
    }
    copy_tree(&plan.subject_root, &plan.output_root).map_err(io(&plan.output_root))?;
    for ((path, before), (_, after)) in sources.iter().zip(&rewritten) {
        if before != after {
            let dest = plan.output_root.join(path);
            std::fs::write(&dest, after).map_err(io(&dest))?;
        }
    }
    if let Some(path) = &plan.manifest_path {
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(path, json).map_err(io(path))?;
    }
    Ok(manifest)
}

/// Copies an instrumented tree to `dest` with all probes removed.
pub fn strip_probes(tree: &Path, dest: &Path) -> Result<(), InstrumentError> {
    let sources = read_sources(tree)?;
    let stripped: Vec<_> = sources.iter().map(|(p, t)| (p, strip_text(t))).collect();
    if stripped.iter().all(|(_, s)| s.is_none()) {
        return Err(InstrumentError::NotInstrumented);
    }
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| InstrumentError::Io { path, source }
    };
    copy_tree(tree, dest).map_err(io(dest))?;
    for (path, text) in stripped {
        if let Some(text) = text {
            let p = dest.join(path);
            std::fs::write(&p, text).map_err(io(&p))?;
        }
    }
    Ok(())
}
