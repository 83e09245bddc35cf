//! Running subject tests: seeding, deadlines, coverage and a worker pool with
//! stacks deep enough for the interpreter.

use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::Instant;

use prodcarve_lang::{Host, Interpreter, Program, RunOptions, RuntimeError, TestCase};
use sha2::{Digest, Sha256};

const WORKER_STACK: usize = 256 << 20;

/// Worker pool used for every interpreter run.
pub fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .stack_size(WORKER_STACK)
            .thread_name(|i| format!("prodcarve-worker-{i}"))
            .build()
            .expect("worker pool")
    })
}

/// Deterministic RNG seed for one run of one test.
pub fn test_seed(test_id: &str, run: u32, salt: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(test_id.as_bytes());
    h.update(run.to_le_bytes());
    h.update(salt.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TestVerdict {
    Pass,
    Fail(String),
    TimedOut,
}

impl TestVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, TestVerdict::Pass)
    }
}

#[derive(Debug)]
pub struct TestRun {
    pub verdict: TestVerdict,
    pub coverage: HashSet<String>,
}

pub fn run_test(
    program: &Program,
    host: &dyn Host,
    test: &TestCase,
    seed: u64,
    deadline: Option<Instant>,
    track_coverage: bool,
) -> TestRun {
    let opts = RunOptions { seed, deadline, track_coverage, ..RunOptions::default() };
    let mut interp = Interpreter::new(program, host, opts);
    let verdict = match interp.run_test(test) {
        Ok(()) => TestVerdict::Pass,
        Err(RuntimeError::Timeout) => TestVerdict::TimedOut,
        Err(e) => TestVerdict::Fail(e.to_string()),
    };
    TestRun { verdict, coverage: interp.coverage().cloned().unwrap_or_default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(test_seed("a::t", 0, 0), test_seed("a::t", 0, 0));
        assert_ne!(test_seed("a::t", 0, 0), test_seed("a::t", 1, 0));
        assert_ne!(test_seed("a::t", 0, 0), test_seed("a::u", 0, 0));
    }

    #[test]
    fn deep_recursion_fits_worker_stack() {
        let p = Program::build(vec![(
            "tests/t.sl".into(),
            "fn down(n: int) -> int { if (n == 0) { return 0; } return down(n - 1) + 1; } test fn deep() { assert_eq(down(140), 140); }"
                .into(),
        )])
        .unwrap();
        let run = pool().install(|| run_test(&p, &prodcarve_lang::NoHost, &p.tests()[0], 1, None, false));
        assert_eq!(run.verdict, TestVerdict::Pass);
    }
}
