//! The subject language: a small class-based language whose programs are the
//! subjects observed, mutated and tested by `prodcarve`.
//!
//! Source files are parsed with spans intact ([`parser`]), checked for
//! name-resolution and return-type errors ([`check`]), and executed by a
//! tree-walking [`interp::Interpreter`]. Probes, codec access and external
//! services are delegated to an embedding [`interp::Host`].

pub mod ast;
pub mod builtins;
pub mod check;
pub mod error;
pub mod interp;
pub mod lexer;
pub mod parser;
pub mod project;
pub mod value;

pub use error::{Diagnostic, ProjectError, RuntimeError, SyntaxError};
pub use interp::{Host, HostContext, Interpreter, NoHost, RunOptions};
pub use project::{Program, TestCase};
pub use value::{ClassInfo, ClassResolver, MapKey, Value};
