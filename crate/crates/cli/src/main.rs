use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use prodcarve::synth::AssertMode;
use prodcarve_cli::{PipelineConfig, PipelineError};

/// Turns production executions of pseudo-tested methods into differential unit tests.
///
/// Every option can also be set through an environment variable prefixed
/// with PRODCARVE_, for example PRODCARVE_THRESHOLD_BYTES.
#[derive(Parser)]
#[command(name = "prodcarve", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Classify methods with extreme mutation and list the pseudo-tested ones.
    SelectTargets,
    /// Copy the subject with probes around every target.
    Instrument,
    /// Run the subject's workload on the instrumented copy and record profiles.
    Run,
    /// Deduplicate profiles and write one test per unique profile.
    Generate,
    /// Run the generated tests and measure what they add.
    Assess,
    /// Print the assessment table.
    Report,
    /// All of the above, in order.
    Pipeline,
}

#[derive(Args)]
struct Opts {
    /// Root of the subject project.
    #[arg(long, global = true, env = "PRODCARVE_SUBJECT", default_value = ".")]
    subject: PathBuf,
    /// Target list, one method id per line. Defaults to the selected pseudo-tested methods.
    #[arg(long, global = true, env = "PRODCARVE_TARGETS")]
    targets: Option<PathBuf>,
    /// Per-method budget for recorded profiles.
    #[arg(long, global = true, env = "PRODCARVE_THRESHOLD_BYTES", default_value_t = prodcarve::collector::DEFAULT_THRESHOLD_BYTES)]
    threshold_bytes: u64,
    /// Values larger than this are stored as resource files.
    #[arg(long, global = true, env = "PRODCARVE_INLINE_THRESHOLD_BYTES", default_value_t = prodcarve::model::DEFAULT_INLINE_THRESHOLD)]
    inline_threshold_bytes: usize,
    /// deep-serial or native-eq.
    #[arg(long, global = true, env = "PRODCARVE_ASSERT_MODE", default_value = "deep-serial")]
    assert_mode: String,
    /// Runs per generated test when filtering flaky tests.
    #[arg(long, global = true, env = "PRODCARVE_FLAKY_RUNS", default_value_t = prodcarve_cli::DEFAULT_FLAKY_RUNS)]
    flaky_runs: u32,
    /// Seconds each test may run against one variant.
    #[arg(long, global = true, env = "PRODCARVE_VARIANT_TIMEOUT", default_value_t = 60)]
    variant_timeout: u64,
    /// Output root for all phase artifacts.
    #[arg(long, global = true, env = "PRODCARVE_OUT", default_value = "prodcarve-out")]
    out: PathBuf,
    /// Seed handed to the workload.
    #[arg(long, global = true, env = "PRODCARVE_SEED", default_value_t = 0)]
    seed: i64,
    /// Concurrent workload copies.
    #[arg(long, global = true, env = "PRODCARVE_WORKLOAD_THREADS", default_value_t = 1)]
    workload_threads: usize,
}

impl Opts {
    fn config(self) -> Result<PipelineConfig, PipelineError> {
        let assert_mode: AssertMode =
            self.assert_mode.parse::<AssertMode>().map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        let mut cfg = PipelineConfig::new(self.subject, self.out);
        cfg.targets = self.targets;
        cfg.threshold_bytes = self.threshold_bytes;
        cfg.inline_threshold_bytes = self.inline_threshold_bytes;
        cfg.assert_mode = assert_mode;
        cfg.flaky_runs = self.flaky_runs;
        cfg.variant_timeout = Duration::from_secs(self.variant_timeout);
        cfg.seed = self.seed;
        cfg.workload_threads = self.workload_threads;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(command: Command, cfg: &PipelineConfig) -> anyhow::Result<()> {
    match command {
        Command::SelectTargets => {
            let s = prodcarve_cli::select_targets(cfg)?;
            for t in &s.targets {
                println!("{t}");
            }
            eprintln!("{} targets written to {}", s.targets.len(), cfg.layout().targets().display());
        }
        Command::Instrument => {
            let m = prodcarve_cli::instrument(cfg)?;
            for s in &m.skipped {
                eprintln!("skipped {}: {}", s.method, s.reason);
            }
            eprintln!("{} probes; instrumented tree at {}", m.probes.len(), cfg.layout().instrumented().display());
        }
        Command::Run => {
            let r = prodcarve_cli::run(cfg)?;
            for (m, c) in &r.stats.methods {
                eprintln!(
                    "{m}: {} invocations, {} collected, {} skipped",
                    c.invocations,
                    c.collected,
                    c.skipped.total()
                );
            }
        }
        Command::Generate => {
            let r = prodcarve_cli::generate(cfg)?;
            for f in &r.failures {
                eprintln!("not generated: {f}");
            }
            let n: usize = r.methods.values().map(|m| m.generated).sum();
            eprintln!("{n} tests written under {}", cfg.layout().generated().display());
        }
        Command::Assess => {
            let r = prodcarve_cli::assess(cfg)?;
            print!("{}", prodcarve_cli::render_table(&r));
        }
        Command::Report => print!("{}", prodcarve_cli::report(cfg)?),
        Command::Pipeline => print!("{}", prodcarve_cli::pipeline(cfg)?.table),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match cli.opts.config() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
