//! End-to-end acceptance checks on the sample subject. Prints one PASS/FAIL
//! line per criterion and exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use prodcarve::assess::{AssessmentReport, SuiteExecution, TestOutcome};
use prodcarve::codec::{decode_str, serialize_value, ClassSet, Shape};
use prodcarve::collector::{CollectionStats, Collector, CollectorConfig, Recorded, SkipCause, STATS_FILE};
use prodcarve::instrument::{apply_probes, InstrumentationPlan};
use prodcarve::model::{MethodId, ObjectProfile, SerializedValue};
use prodcarve::mutation::TargetStatus;
use prodcarve::store::{dedupe, load_and_stats};
use prodcarve::synth::AssertMode;
use prodcarve::workload::{run_workload, WorkloadConfig};
use prodcarve_cli::{pipeline, PipelineConfig, PipelineRun};
use prodcarve_fixture::{manifest, subject_root, Determinism, FixtureManifest};
use prodcarve_lang::value::{ClassInfo, FieldInfo};
use prodcarve_lang::{ast::TypeName, MapKey, Value};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

type Outcome = Result<String, String>;

fn deterministic_runner() -> TestRunner {
    TestRunner::new_with_rng(Config::default(), TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check(cond: bool, detail: impl Into<String>) -> Outcome {
    if cond {
        Ok(detail.into())
    } else {
        Err(detail.into())
    }
}

fn rank(s: TargetStatus) -> u8 {
    match s {
        TargetStatus::NotCovered => 0,
        TargetStatus::PseudoTested => 1,
        TargetStatus::WellTested => 2,
    }
}

/// Shared state: one default-seed pipeline run reused by several criteria.
struct Runs {
    manifest: FixtureManifest,
    default: PipelineRun,
    default_out: tempfile::TempDir,
    default_elapsed: Duration,
}

fn run_pipeline(seed: i64, mode: AssertMode, threshold: Option<u64>) -> (PipelineRun, tempfile::TempDir, Duration) {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::new(subject_root(), out.path());
    cfg.seed = seed;
    cfg.assert_mode = mode;
    if let Some(t) = threshold {
        cfg.threshold_bytes = t;
    }
    let start = Instant::now();
    let run = pipeline(&cfg).unwrap_or_else(|e| panic!("pipeline failed for seed {seed}: {e}"));
    (run, out, start.elapsed())
}

fn stats_invariant(stats: &CollectionStats) -> Result<(), String> {
    for (m, c) in &stats.methods {
        if c.invocations != c.collected + c.skipped.total() {
            return Err(format!("{m}: {} != {} + {}", c.invocations, c.collected, c.skipped.total()));
        }
    }
    Ok(())
}

// Value trees for the round-trip check. Containers may alias earlier
// containers and lists may contain themselves.

#[derive(Debug, Clone)]
enum Tree {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Tree>, bool),
    Map(Vec<(Key, Tree)>),
    Object(u8, Vec<Tree>),
    Alias(usize),
}

#[derive(Debug, Clone)]
enum Key {
    Int(i64),
    Str(String),
}

fn tree_strategy() -> impl Strategy<Value = Tree> {
    use proptest::prelude::*;
    let leaf = prop_oneof![
        Just(Tree::Null),
        any::<bool>().prop_map(Tree::Bool),
        any::<i64>().prop_map(Tree::Int),
        prop_oneof![any::<f64>(), Just(f64::NAN), Just(-0.0), Just(f64::INFINITY), Just(1e-300)].prop_map(Tree::Float),
        "\\PC{0,12}".prop_map(Tree::Str),
        (0usize..8).prop_map(Tree::Alias),
    ];
    leaf.prop_recursive(5, 64, 6, |inner| {
        let key = prop_oneof![any::<i64>().prop_map(Key::Int), "[a-z\"\\\\ ]{0,6}".prop_map(Key::Str)];
        prop_oneof![
            (proptest::collection::vec(inner.clone(), 0..6), any::<bool>()).prop_map(|(v, cyc)| Tree::List(v, cyc)),
            proptest::collection::vec((key, inner.clone()), 0..5).prop_map(Tree::Map),
            (0u8..2, proptest::collection::vec(inner, 3)).prop_map(|(c, f)| Tree::Object(c, f)),
        ]
    })
}

fn classes() -> (ClassSet, [Arc<ClassInfo>; 2]) {
    let field = |name: &str, transient: bool| FieldInfo { name: name.into(), ty: TypeName::Any, transient };
    let node = Arc::new(ClassInfo {
        name: "Node".into(),
        fields: vec![field("value", false), field("next", false), field("cache", true)],
        has_equals: false,
    });
    let pair = Arc::new(ClassInfo {
        name: "Pair".into(),
        fields: vec![field("b", false), field("a", false), field("z", false)],
        has_equals: true,
    });
    let set = ClassSet(HashMap::from([("Node".to_string(), node.clone()), ("Pair".to_string(), pair.clone())]));
    (set, [node, pair])
}

fn build(t: &Tree, classes: &[Arc<ClassInfo>; 2], made: &mut Vec<Value>) -> Value {
    match t {
        Tree::Null => Value::Null,
        Tree::Bool(b) => Value::Bool(*b),
        Tree::Int(i) => Value::Int(*i),
        Tree::Float(f) => Value::Float(*f),
        Tree::Str(s) => Value::str(s),
        Tree::Alias(i) => made.get(*i).cloned().unwrap_or(Value::Null),
        Tree::List(items, cyclic) => {
            let v = Value::list(Vec::new());
            made.push(v.clone());
            let built: Vec<Value> = items.iter().map(|i| build(i, classes, made)).collect();
            if let Value::List(l) = &v {
                l.write(|l| {
                    l.extend(built);
                    if *cyclic {
                        l.push(v.clone());
                    }
                });
            }
            v
        }
        Tree::Map(entries) => {
            let v = Value::map(BTreeMap::new());
            made.push(v.clone());
            let built: Vec<(MapKey, Value)> = entries
                .iter()
                .map(|(k, t)| {
                    let k = match k {
                        Key::Int(i) => MapKey::Int(*i),
                        Key::Str(s) => MapKey::Str(s.clone()),
                    };
                    (k, build(t, classes, made))
                })
                .collect();
            if let Value::Map(m) = &v {
                m.write(|m| m.extend(built));
            }
            v
        }
        Tree::Object(c, fields) => {
            let class = classes[*c as usize].clone();
            let names: Vec<String> = class.fields.iter().map(|f| f.name.clone()).collect();
            let v = Value::object(class, BTreeMap::new());
            made.push(v.clone());
            let built: Vec<(String, Value)> =
                names.into_iter().zip(fields).map(|(n, t)| (n, build(t, classes, made))).collect();
            if let Value::Object(o) = &v {
                o.write(|o| o.fields.extend(built));
            }
            v
        }
    }
}

fn c1_round_trip() -> Outcome {
    let start = Instant::now();
    let (set, infos) = classes();
    let mut runner = deterministic_runner();
    let strategy = tree_strategy();
    let mut cycles = 0;
    for i in 0..1000 {
        let tree = strategy.new_tree(&mut runner).unwrap().current();
        let value = build(&tree, &infos, &mut Vec::new());
        let first = serialize_value(&value).map_err(|e| format!("tree {i}: {e}"))?;
        let back = decode_str(first.as_str(), &Shape::Any, &set)
            .map_err(|e| format!("tree {i}: {e} in {}", first.as_str()))?;
        let second = serialize_value(&back).map_err(|e| format!("tree {i}: {e}"))?;
        if first.as_str() != second.as_str() {
            return Err(format!("tree {i}: {} became {}", first.as_str(), second.as_str()));
        }
        if first.as_str().contains('@') {
            cycles += 1;
        }
        // Cyclic values hold themselves alive; break the cycles so the run does not leak.
        for v in [value, back] {
            if let Value::List(l) = v {
                l.write(|l| l.clear());
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(30),
        format!("1000 trees byte-identical after a round trip ({cycles} with shared or cyclic nodes) in {elapsed:.2?}"),
    )
}

fn c2_dedup_oracle() -> Outcome {
    use proptest::prelude::*;
    let start = Instant::now();
    let method: MethodId = "m.C.f/1".parse().unwrap();
    let sv = |s: &str| SerializedValue::from_canonical(s.to_string());
    let profile = (0u8..3, 0u8..3, 0u8..4).prop_map(|(r, p, o)| (r, p, o));
    let multiset = proptest::collection::vec(profile, 0..=200);
    let mut runner = deterministic_runner();
    let mut total = 0;
    for case in 0..100 {
        let raw = multiset.new_tree(&mut runner).unwrap().current();
        let profiles: Vec<ObjectProfile> = raw
            .iter()
            .enumerate()
            .map(|(i, (r, p, o))| ObjectProfile {
                method: method.clone(),
                seq: i as u64 + 1,
                receiving: sv(&format!("C#0{{n:{r}}}")),
                parameters: vec![sv(&p.to_string())],
                result: sv(&format!("\"{o}\"")),
            })
            .collect();
        // Pairwise oracle: keep a profile iff no earlier one has equal constituents.
        let oracle: Vec<&ObjectProfile> = profiles
            .iter()
            .enumerate()
            .filter(|(i, p)| {
                !profiles[..*i].iter().any(|q| {
                    q.receiving.as_str() == p.receiving.as_str()
                        && q.parameters.iter().map(|v| v.as_str()).eq(p.parameters.iter().map(|v| v.as_str()))
                        && q.result.as_str() == p.result.as_str()
                })
            })
            .map(|(_, p)| p)
            .collect();
        let got = dedupe(&profiles).map_err(|e| e.to_string())?;
        if got.iter().collect::<Vec<_>>() != oracle {
            return Err(format!("case {case}: dedupe kept {} profiles, oracle {}", got.len(), oracle.len()));
        }
        total += profiles.len();
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(30),
        format!("100 multisets ({total} profiles) match the pairwise oracle in {elapsed:.2?}"),
    )
}

fn c3_behavior_preserved(m: &FixtureManifest) -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let targets: Vec<MethodId> = m.methods.iter().map(|p| p.method.clone()).collect();
    let instrumented = dir.path().join("instrumented");
    apply_probes(&InstrumentationPlan {
        targets,
        subject_root: subject_root(),
        output_root: instrumented.clone(),
        manifest_path: None,
    })
    .map_err(|e| e.to_string())?;
    let cfg = WorkloadConfig { seed: m.default_seed, ..Default::default() };
    let pristine = run_workload(&subject_root(), None, &cfg).map_err(|e| e.to_string())?;
    let collector = Arc::new(Collector::create(CollectorConfig::new(dir.path().join("store"))).unwrap());
    let recorded = run_workload(&instrumented, Some(collector.clone()), &cfg).map_err(|e| e.to_string())?;
    let unrecorded = run_workload(&instrumented, None, &cfg).map_err(|e| e.to_string())?;
    let stored: u64 = collector.stats().methods.values().map(|c| c.collected).sum();
    let elapsed = start.elapsed();
    let same = pristine.outputs == recorded.outputs && pristine.outputs == unrecorded.outputs;
    check(
        same && stored > 0 && elapsed < Duration::from_secs(60),
        format!(
            "workload output identical ({} bytes) with all {} public methods probed, {stored} profiles stored, in {elapsed:.2?}",
            pristine.outputs.concat().len(),
            m.methods.len()
        ),
    )
}

fn c4_budget(runs: &[(i64, CollectionStats)]) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = CollectorConfig::new(dir.path());
    cfg.threshold_bytes = 1000;
    let collector = Collector::create(cfg).unwrap();
    let method: MethodId = "m.C.f/0".parse().unwrap();
    // 396-byte receiver plus the 4-byte result "1234".
    let receiving = SerializedValue::from_canonical(format!("\"{}\"", "x".repeat(394)));
    let outcomes: Vec<Recorded> = (0..5)
        .map(|_| collector.record_invocation(&method, Ok(receiving.clone()), Ok(vec![]), &Value::Int(1234)))
        .collect();
    collector.flush_stats().unwrap();
    let store = load_and_stats(dir.path()).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = store.profiles[&method].iter().map(ObjectProfile::byte_count).collect();
    let expected = [
        Recorded::Stored(1),
        Recorded::Stored(2),
        Recorded::Skipped(SkipCause::Budget),
        Recorded::Skipped(SkipCause::Budget),
        Recorded::Skipped(SkipCause::Budget),
    ];
    let stats = CollectionStats::load(&dir.path().join(STATS_FILE)).unwrap();
    let c = &stats.methods[&method];
    if outcomes != expected || sizes != [400, 400] || c.skipped.budget != 3 || c.bytes != 800 {
        return Err(format!("outcomes {outcomes:?}, stored sizes {sizes:?}, counters {c:?}"));
    }
    stats_invariant(&stats)?;
    for (seed, s) in runs {
        stats_invariant(s).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    let budget_skips: u64 = runs.iter().flat_map(|(_, s)| s.methods.values()).map(|c| c.skipped.budget).sum();
    Ok(format!(
        "2 of 5 400-byte profiles stored under a 1000-byte budget, 3 skipped(budget); invocations = collected + skipped on {} fixture runs ({budget_skips} budget skips in the tight-budget run)",
        runs.len()
    ))
}

fn c5_one_test_per_unique(r: &Runs) -> Outcome {
    let report = &r.default.assessment;
    for row in &report.methods {
        if row.generated_tests != row.unique {
            return Err(format!("{}: {} tests for {} unique profiles", row.method, row.generated_tests, row.unique));
        }
    }
    for (id, e) in &r.manifest.expected_profiles {
        let row = report.row(id).ok_or_else(|| format!("{id} missing from report"))?;
        if (row.invocations, row.unique) != (e.invocations, e.unique) {
            return Err(format!("{id}: {} invocations, {} unique; expected {e:?}", row.invocations, row.unique));
        }
    }
    let get_name = report.methods.iter().find(|m| m.method.method == "getName").ok_or("no getName row")?;
    Ok(format!(
        "tests == unique for all {} targets; getName {} -> {} -> {}",
        report.methods.len(),
        get_name.invocations,
        get_name.unique,
        get_name.generated_tests
    ))
}

fn c6_self_consistency(r: &Runs) -> Outcome {
    let mut total = 0;
    for p in r.manifest.methods.iter().filter(|p| p.determinism == Determinism::Deterministic) {
        let Some(row) = r.default.assessment.row(&p.method) else { continue };
        if row.passing != row.generated_tests {
            return Err(format!("{}: {} of {} pass: {:?}", p.method, row.passing, row.generated_tests, row.failures));
        }
        total += row.generated_tests;
    }
    check(total > 0, format!("{total} of {total} tests for deterministic methods pass in deep-serial mode"))
}

fn c7_improvement(r: &Runs) -> Outcome {
    let planted: Vec<_> = r
        .manifest
        .with_status(TargetStatus::PseudoTested)
        .into_iter()
        .filter(|p| !p.has_tag("null-returning"))
        .collect();
    let improved: Vec<_> = planted
        .iter()
        .filter(|p| r.default.assessment.row(&p.method).is_some_and(|row| row.status_after == TargetStatus::WellTested))
        .collect();
    let rate = improved.len() as f64 / planted.len() as f64;
    check(
        rate >= 0.6 && r.default_elapsed < Duration::from_secs(300),
        format!(
            "{} of {} planted pseudo-tested methods now well-tested ({:.1}%), pipeline {:.2?}",
            improved.len(),
            planted.len(),
            rate * 100.0,
            r.default_elapsed
        ),
    )
}

fn c8_null_corner(r: &Runs) -> Outcome {
    let corner = r.manifest.tagged("null-returning");
    let p = corner.first().ok_or("manifest has no null-returning method")?;
    let row = r.default.assessment.row(&p.method).ok_or("null-returning method not in report")?;
    check(
        row.passing >= 1 && row.failing == 0 && row.status_after == TargetStatus::PseudoTested,
        format!("{}: {} passing tests, still {}", p.method, row.passing, row.status_after),
    )
}

fn c9_native_eq(r: &Runs) -> Outcome {
    let p = r.manifest.tagged("no-deep-equality").into_iter().next().ok_or("manifest has no type without equality")?;
    let (native, _dir, _) = run_pipeline(r.manifest.default_seed, AssertMode::NativeEq, None);
    let deep_exec: SuiteExecution = read(&r.default_out.path().join(prodcarve_cli::EXECUTIONS_FILE));
    let native_row = native.assessment.row(&p.method).ok_or("method missing from native-eq report")?;
    let deep_row = r.default.assessment.row(&p.method).ok_or("method missing from deep-serial report")?;
    // The same profile yields the same test name in both modes.
    let failing: Vec<&String> = native_row.failures.iter().map(|f| &f.test).collect();
    let all_pass_in_deep =
        failing.iter().all(|t| deep_exec.tests.get(*t).is_some_and(|e| e.outcome == TestOutcome::Pass));
    check(
        native_row.failing >= 1 && all_pass_in_deep && deep_row.failing == 0,
        format!(
            "{}: native-eq {} failing of {}; the same profiles pass in deep-serial ({} of {})",
            p.method, native_row.failing, native_row.generated_tests, deep_row.passing, deep_row.generated_tests
        ),
    )
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn c10_flaky(r: &Runs) -> Outcome {
    let p = r
        .manifest
        .methods
        .iter()
        .find(|p| p.determinism == Determinism::Nondeterministic)
        .ok_or("manifest has no nondeterministic method")?;
    let row = r.default.assessment.row(&p.method).ok_or("nondeterministic method not in report")?;
    let exec: SuiteExecution = read(&r.default_out.path().join(prodcarve_cli::EXECUTIONS_FILE));
    let flaky: Vec<&String> =
        row.failures.iter().filter(|f| f.outcome == TestOutcome::Flaky).map(|f| &f.test).collect();
    let passing = exec.passing();
    let excluded = flaky.iter().all(|t| !passing.contains(*t));
    let runs_ok = flaky.iter().all(|t| exec.tests[*t].runs.len() == 5);
    check(
        !flaky.is_empty() && excluded && runs_ok,
        format!(
            "{}: {} of {} tests flaky over 5 runs, none in the improvement suite",
            p.method,
            flaky.len(),
            row.generated_tests
        ),
    )
}

fn c11_monotonic(reports: &[(i64, AssessmentReport)]) -> Outcome {
    let mut methods = 0;
    for (seed, report) in reports {
        for row in &report.methods {
            if rank(row.status_after) < rank(row.status_before) {
                return Err(format!(
                    "seed {seed}: {} went from {} to {}",
                    row.method, row.status_before, row.status_after
                ));
            }
            methods += 1;
        }
    }
    check(
        reports.len() == 10,
        format!("no downgrade across {} seeds ({methods} method classifications)", reports.len()),
    )
}

fn main() {
    let manifest = manifest().expect("fixture manifest");
    let (default, default_out, default_elapsed) = run_pipeline(manifest.default_seed, AssertMode::DeepSerial, None);
    let runs = Runs { manifest, default, default_out, default_elapsed };

    let mut runner = deterministic_runner();
    let mut seeds = BTreeSet::new();
    while seeds.len() < 10 {
        seeds.insert((0i64..1_000_000).new_tree(&mut runner).unwrap().current());
    }
    let mut stats = vec![(runs.manifest.default_seed, runs.default.run.stats.clone())];
    let mut reports = Vec::new();
    for &seed in &seeds {
        let (run, _dir, _) = run_pipeline(seed, AssertMode::DeepSerial, None);
        stats.push((seed, run.run.stats.clone()));
        reports.push((seed, run.assessment));
    }
    let (tight, _dir, _) = run_pipeline(runs.manifest.default_seed, AssertMode::DeepSerial, Some(1000));
    stats.push((runs.manifest.default_seed, tight.run.stats.clone()));

    let criteria: Vec<(&str, Outcome)> = vec![
        ("round-trip property", c1_round_trip()),
        ("dedup oracle equivalence", c2_dedup_oracle()),
        ("behavior preservation", c3_behavior_preserved(&runs.manifest)),
        ("budget enforcement", c4_budget(&stats)),
        ("one test per unique profile", c5_one_test_per_unique(&runs)),
        ("self-consistency", c6_self_consistency(&runs)),
        ("improvement", c7_improvement(&runs)),
        ("null-returning corner case", c8_null_corner(&runs)),
        ("native equality vs deep serialization", c9_native_eq(&runs)),
        ("flakiness filter", c10_flaky(&runs)),
        ("monotonicity", c11_monotonic(&reports)),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in criteria.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1)
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
