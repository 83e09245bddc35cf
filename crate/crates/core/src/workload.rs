//! Running a subject's production workload: `fn main(seed: int)` declared
//! under `workload/`, with the subject's services available.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use prodcarve_lang::project::{file_role, FileRole};
use prodcarve_lang::{Interpreter, Program, ProjectError, RunOptions, Value};
use rayon::prelude::*;
use thiserror::Error;

use crate::collector::Collector;
use crate::exec;
use crate::runtime::{RuntimeHost, ServiceTable};

pub const ENTRY_POINT: &str = "main";

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("cannot load subject: {0}")]
    Project(#[from] ProjectError),
    #[error("cannot read services: {0}")]
    Services(#[source] std::io::Error),
    #[error("the workload declares no `fn {ENTRY_POINT}(seed: int)`")]
    NoEntryPoint,
    #[error("workload run {run} failed: {message}")]
    Failed { run: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct WorkloadConfig {
    pub seed: i64,
    /// Concurrent copies of the workload; copy `i` runs with `seed + i`.
    pub threads: usize,
    pub deadline: Option<Instant>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig { seed: 0, threads: 1, deadline: None }
    }
}

/// Printed output of each workload copy, in copy order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadOutput {
    pub outputs: Vec<String>,
}

pub fn run_workload(
    subject_root: &Path,
    collector: Option<Arc<Collector>>,
    cfg: &WorkloadConfig,
) -> Result<WorkloadOutput, WorkloadError> {
    let program = Program::load(subject_root)?;
    let services = ServiceTable::load(subject_root).map_err(WorkloadError::Services)?;
    let mut host = RuntimeHost::new().with_services(services).with_resource_root(subject_root);
    if let Some(c) = collector {
        host = host.with_collector(c);
    }
    run_program(&program, &host, cfg)
}

pub fn run_program(
    program: &Program,
    host: &RuntimeHost,
    cfg: &WorkloadConfig,
) -> Result<WorkloadOutput, WorkloadError> {
    let declared = program.files.iter().filter(|f| file_role(&f.path) == FileRole::Workload).any(|f| {
        f.items.iter().any(
            |i| matches!(i, prodcarve_lang::ast::Item::Function(d) if d.name == ENTRY_POINT && d.params.len() == 1),
        )
    });
    if !declared {
        return Err(WorkloadError::NoEntryPoint);
    }
    let results: Vec<Result<String, WorkloadError>> = exec::pool().install(|| {
        (0..cfg.threads.max(1))
            .into_par_iter()
            .map(|run| {
                let seed = cfg.seed.wrapping_add(run as i64);
                let opts = RunOptions { seed: seed as u64, deadline: cfg.deadline, ..RunOptions::default() };
                let mut interp = Interpreter::new(program, host, opts);
                interp
                    .call_function(ENTRY_POINT, vec![Value::Int(seed)])
                    .map_err(|e| WorkloadError::Failed { run, message: e.to_string() })?;
                Ok(interp.take_output())
            })
            .collect()
    });
    Ok(WorkloadOutput { outputs: results.into_iter().collect::<Result<_, _>>()? })
}
