use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::value::Value;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{message} (at byte {offset})")]
pub struct SyntaxError {
    pub offset: usize,
    pub message: String,
}

impl SyntaxError {
    pub fn new(offset: usize, message: impl Into<String>) -> Self {
        SyntaxError { offset, message: message.into() }
    }
}

/// A located problem reported by the parser or the checker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.file, self.line, self.col, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("project does not compile:\n{}", render(.0))]
    Compile(Vec<Diagnostic>),
}

fn render(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

/// Abrupt completion of subject code.
#[derive(Debug, Clone)]
pub enum RuntimeError {
    /// Raised by `throw` or by a failing builtin; catchable with `try`.
    Thrown(Value),
    /// A runtime fault such as a type error or missing method; catchable.
    Fault(String),
    /// An assertion builtin failed. Not catchable.
    Assertion(String),
    /// The interpreter's deadline expired. Not catchable.
    Timeout,
    /// Call depth limit exceeded. Not catchable.
    StackOverflow,
}

impl RuntimeError {
    pub fn fault(msg: impl Into<String>) -> Self {
        RuntimeError::Fault(msg.into())
    }

    pub fn is_catchable(&self) -> bool {
        matches!(self, RuntimeError::Thrown(_) | RuntimeError::Fault(_))
    }
}

impl fmt::Display for RuntimeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuntimeError::Thrown(v) => write!(f, "uncaught throw: {}", v.display()),
            RuntimeError::Fault(m) => write!(f, "runtime fault: {m}"),
            RuntimeError::Assertion(m) => write!(f, "assertion failed: {m}"),
            RuntimeError::Timeout => f.write_str("deadline exceeded"),
            RuntimeError::StackOverflow => f.write_str("call depth limit exceeded"),
        }
    }
}

impl std::error::Error for RuntimeError {}
