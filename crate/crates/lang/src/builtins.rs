//! Names and arities of the free functions every program may call.

#[derive(Debug, Clone, Copy)]
pub struct Builtin {
    pub name: &'static str,
    pub min_args: usize,
    /// `None` for variadic builtins.
    pub max_args: Option<usize>,
    /// Supplied by the embedding [`crate::interp::Host`] rather than the interpreter.
    pub host: bool,
}

const fn core(name: &'static str, min_args: usize, max_args: Option<usize>) -> Builtin {
    Builtin { name, min_args, max_args, host: false }
}

const fn host(name: &'static str, min_args: usize, max_args: Option<usize>) -> Builtin {
    Builtin { name, min_args, max_args, host: true }
}

pub const BUILTINS: &[Builtin] = &[
    core("print", 0, None),
    core("str", 1, Some(1)),
    core("len", 1, Some(1)),
    core("int", 1, Some(1)),
    core("float", 1, Some(1)),
    core("type_of", 1, Some(1)),
    core("abs", 1, Some(1)),
    core("min", 2, Some(2)),
    core("max", 2, Some(2)),
    core("range", 2, Some(2)),
    core("rand_int", 1, Some(1)),
    core("rand_float", 0, Some(0)),
    core("resource", 1, Some(1)),
    core("assert", 1, Some(2)),
    core("assert_eq", 2, Some(3)),
    core("assert_ne", 2, Some(3)),
    // Probes injected by the instrumenter.
    host("probe_enter", 3, Some(3)),
    host("probe_exit", 2, Some(2)),
    // Codec access for generated tests.
    host("deserialize", 2, Some(2)),
    host("serialize", 1, Some(1)),
    host("load_resource", 1, Some(1)),
    host("assert_serial_eq", 2, Some(3)),
    // External services: available in production, absent under test.
    host("service", 1, None),
];

pub fn lookup(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}

impl Builtin {
    pub fn accepts(&self, n: usize) -> bool {
        n >= self.min_args && self.max_args.is_none_or(|max| n <= max)
    }
}
