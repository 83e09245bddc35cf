//! Loading a subject tree from disk into a checked [`Program`].
//!
//! A subject tree has three top-level directories, each holding `.sl` files:
//!
//! ```text
//! src/        library code (classes and helper functions)
//! tests/      test functions (`test fn ...`)
//! workload/   drivers exercising the library (entry point `main(seed: int)`)
//! ```
//!
//! The container path of a file is its path below the top-level directory with
//! the extension dropped and `/` replaced by `.` (`src/shop/cart.sl` is
//! `shop.cart`).

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use walkdir::WalkDir;

use crate::ast::{line_col, ClassDecl, FnDecl, Item, SourceFile};
use crate::check;
use crate::error::{Diagnostic, ProjectError};
use crate::parser::parse_file;
use crate::value::{ClassInfo, ClassResolver};

pub const SOURCE_EXT: &str = "sl";
pub const SOURCE_DIRS: [&str; 3] = ["src", "tests", "workload"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileRole {
    Source,
    Test,
    Workload,
    Other,
}

pub fn file_role(path: &str) -> FileRole {
    match path.split('/').next() {
        Some("src") => FileRole::Source,
        Some("tests") => FileRole::Test,
        Some("workload") => FileRole::Workload,
        _ => FileRole::Other,
    }
}

/// `src/shop/cart.sl` -> `shop.cart`.
pub fn container_path(path: &str) -> String {
    let trimmed = path.strip_suffix(&format!(".{SOURCE_EXT}")).unwrap_or(path);
    let mut parts = trimmed.split('/');
    if matches!(file_role(path), FileRole::Source | FileRole::Test | FileRole::Workload) {
        parts.next();
    }
    parts.collect::<Vec<_>>().join(".")
}

/// Reads every `.sl` file below the tree's source directories, sorted by path.
pub fn read_sources(root: &Path) -> Result<Vec<(String, String)>, ProjectError> {
    let mut out = Vec::new();
    for dir in SOURCE_DIRS {
        let base = root.join(dir);
        if !base.is_dir() {
            continue;
        }
        for entry in WalkDir::new(&base).sort_by_file_name() {
            let entry = entry.map_err(|e| ProjectError::Io {
                path: base.clone(),
                source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk failed")),
            })?;
            let path = entry.path();
            if !entry.file_type().is_file() || path.extension().and_then(|e| e.to_str()) != Some(SOURCE_EXT) {
                continue;
            }
            let text = std::fs::read_to_string(path)
                .map_err(|source| ProjectError::Io { path: path.to_path_buf(), source })?;
            out.push((relative(root, path), text));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

#[derive(Debug)]
pub struct ClassEntry {
    pub info: Arc<ClassInfo>,
    pub decl: Arc<ClassDecl>,
    pub file: usize,
    pub container: String,
    methods: HashMap<String, Arc<FnDecl>>,
}

impl ClassEntry {
    pub fn method(&self, name: &str) -> Option<&Arc<FnDecl>> {
        self.methods.get(name)
    }
}

#[derive(Debug, Clone)]
pub struct TestCase {
    /// `<container>::<name>`, unique within a program.
    pub id: String,
    pub file: usize,
    pub decl: Arc<FnDecl>,
}

#[derive(Debug)]
pub struct Program {
    pub files: Vec<SourceFile>,
    classes: BTreeMap<String, ClassEntry>,
    functions: HashMap<String, Arc<FnDecl>>,
    tests: Vec<TestCase>,
}

impl Program {
    pub fn load(root: &Path) -> Result<Program, ProjectError> {
        Program::build(read_sources(root)?).map_err(ProjectError::Compile)
    }

    /// Parses and checks `(path, text)` sources.
    pub fn build(sources: Vec<(String, String)>) -> Result<Program, Vec<Diagnostic>> {
        let mut files = Vec::new();
        let mut diags = Vec::new();
        for (path, text) in sources {
            match parse_file(&path, &text) {
                Ok(f) => files.push(f),
                Err(e) => {
                    let (line, col) = line_col(&text, e.offset);
                    diags.push(Diagnostic { file: path, line, col, message: e.message });
                }
            }
        }
        if !diags.is_empty() {
            return Err(diags);
        }
        let program = Program::index(files, &mut diags);
        diags.extend(check::check_program(&program));
        if diags.is_empty() {
            Ok(program)
        } else {
            Err(diags)
        }
    }

    fn index(files: Vec<SourceFile>, diags: &mut Vec<Diagnostic>) -> Program {
        let mut classes = BTreeMap::new();
        let mut functions = HashMap::new();
        let mut tests: Vec<TestCase> = Vec::new();
        for (fi, file) in files.iter().enumerate() {
            let container = container_path(&file.path);
            let mut err = |offset: usize, message: String| {
                let (line, col) = line_col(&file.text, offset);
                diags.push(Diagnostic { file: file.path.clone(), line, col, message });
            };
            for item in &file.items {
                match item {
                    Item::Class(decl) => {
                        if classes.contains_key(&decl.name) {
                            err(decl.span.start, format!("duplicate class `{}`", decl.name));
                            continue;
                        }
                        let mut methods = HashMap::new();
                        for m in &decl.methods {
                            if methods.insert(m.name.clone(), Arc::new(m.clone())).is_some() {
                                err(m.span.start, format!("duplicate method `{}.{}`", decl.name, m.name));
                            }
                        }
                        let mut seen = std::collections::HashSet::new();
                        for f in &decl.fields {
                            if !seen.insert(&f.name) {
                                err(f.span.start, format!("duplicate field `{}.{}`", decl.name, f.name));
                            }
                        }
                        classes.insert(
                            decl.name.clone(),
                            ClassEntry {
                                info: Arc::new(ClassInfo::from_decl(decl)),
                                decl: Arc::new(decl.clone()),
                                file: fi,
                                container: container.clone(),
                                methods,
                            },
                        );
                    }
                    Item::Function(f) => {
                        if functions.insert(f.name.clone(), Arc::new(f.clone())).is_some() {
                            err(f.span.start, format!("duplicate function `{}`", f.name));
                        }
                    }
                    Item::Test(f) => {
                        let id = format!("{container}::{}", f.name);
                        if tests.iter().any(|t| t.id == id) {
                            err(f.span.start, format!("duplicate test `{id}`"));
                            continue;
                        }
                        tests.push(TestCase { id, file: fi, decl: Arc::new(f.clone()) });
                    }
                }
            }
        }
        Program { files, classes, functions, tests }
    }

    pub fn class(&self, name: &str) -> Option<&ClassEntry> {
        self.classes.get(name)
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassEntry> {
        self.classes.values()
    }

    pub fn function(&self, name: &str) -> Option<&Arc<FnDecl>> {
        self.functions.get(name)
    }

    pub fn tests(&self) -> &[TestCase] {
        &self.tests
    }

    pub fn test(&self, id: &str) -> Option<&TestCase> {
        self.tests.iter().find(|t| t.id == id)
    }

    pub fn file(&self, path: &str) -> Option<&SourceFile> {
        self.files.iter().find(|f| f.path == path)
    }
}

impl ClassResolver for Program {
    fn resolve_class(&self, name: &str) -> Option<Arc<ClassInfo>> {
        self.classes.get(name).map(|c| c.info.clone())
    }
}

/// Copies a subject tree (every regular file) into `dest`.
pub fn copy_tree(src: &Path, dest: &Path) -> std::io::Result<()> {
    for entry in WalkDir::new(src) {
        let entry = entry.map_err(|e| e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk failed")))?;
        let rel = entry.path().strip_prefix(src).expect("walkdir yields children of root");
        let target: PathBuf = dest.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}
