use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use prodcarve::collector::{Collector, CollectorConfig};
use prodcarve::instrument::{apply_probes, InstrumentationPlan};
use prodcarve::model::{MethodDescriptor, ReturnShape};
use prodcarve::mutation::{classify_targets, enumerate_candidates, ClassifyConfig, Suite, TargetStatus};
use prodcarve::store::load_and_stats;
use prodcarve::workload::{run_workload, WorkloadConfig};
use prodcarve_fixture::{manifest, subject_root, Determinism};
use prodcarve_lang::Program;

fn candidates() -> Vec<MethodDescriptor> {
    enumerate_candidates(&Program::load(&subject_root()).unwrap())
}

#[test]
fn manifest_lists_every_public_instance_method() {
    let m = manifest().unwrap();
    let listed: BTreeSet<_> = m.methods.iter().map(|p| p.method.clone()).collect();
    let found: BTreeSet<_> = candidates().into_iter().map(|d| d.id).collect();
    assert_eq!(listed, found);
    for d in candidates() {
        assert_eq!(m.method(&d.id).unwrap().return_shape, d.return_shape, "{}", d.id);
    }
}

#[test]
fn planted_mix_is_present() {
    let m = manifest().unwrap();
    assert!(m.methods.len() >= 15);
    assert!(m.with_status(TargetStatus::PseudoTested).len() >= 5);
    assert!(!m.with_status(TargetStatus::NotCovered).is_empty());
    assert!(!m.tagged("null-returning").is_empty());
    assert!(!m.tagged("mutates-receiver").is_empty());
    assert!(m.methods.iter().any(|p| p.determinism == Determinism::EnvironmentDependent));
    assert!(m.methods.iter().any(|p| p.determinism == Determinism::Nondeterministic));
}

#[test]
fn manifest_statuses_match_classification() {
    let m = manifest().unwrap();
    let suite = Suite::load(&subject_root()).unwrap();
    let records = classify_targets(&suite, &candidates(), &ClassifyConfig::default()).unwrap();
    for r in records {
        assert_eq!(r.status, Some(m.method(&r.method).unwrap().planted_status), "{}", r.method);
    }
}

#[test]
fn workload_reaches_every_pseudo_tested_method() {
    let m = manifest().unwrap();
    let out = tempfile::tempdir().unwrap();
    let targets: Vec<_> = m.with_status(TargetStatus::PseudoTested).iter().map(|p| p.method.clone()).collect();
    let instrumented = out.path().join("instrumented");
    apply_probes(&InstrumentationPlan {
        targets: targets.clone(),
        subject_root: subject_root(),
        output_root: instrumented.clone(),
        manifest_path: None,
    })
    .unwrap();
    let collector = Arc::new(Collector::create(CollectorConfig::new(out.path().join("store"))).unwrap());
    run_workload(
        &instrumented,
        Some(collector.clone()),
        &WorkloadConfig { seed: m.default_seed, ..Default::default() },
    )
    .unwrap();
    collector.flush_stats().unwrap();
    let store = load_and_stats(&out.path().join("store")).unwrap();
    let mut varied = 0;
    for t in &targets {
        let profiles = &store.profiles[t];
        assert!(profiles.len() >= 3, "{t} invoked {} times", profiles.len());
        let combos: BTreeSet<_> = profiles
            .iter()
            .map(|p| {
                (
                    p.receiving.as_str().to_string(),
                    p.parameters.iter().map(|v| v.as_str().to_string()).collect::<Vec<_>>(),
                )
            })
            .collect();
        if combos.len() >= 2 {
            varied += 1;
        }
    }
    assert!(varied * 2 >= targets.len());
    let counts: BTreeMap<_, _> = store.stats.iter().map(|(k, s)| (k.clone(), (s.invocations, s.unique))).collect();
    for (id, e) in &m.expected_profiles {
        assert_eq!(counts[id], (e.invocations, e.unique), "{id}");
    }
    // The null-returning method really returns null in production.
    for p in m.tagged("null-returning") {
        assert!(store.profiles[&p.method].iter().all(|r| r.result.as_str() == "null"));
        assert_eq!(p.return_shape, ReturnShape::Reference);
    }
}
