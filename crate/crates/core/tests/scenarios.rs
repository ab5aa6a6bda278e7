mod common;

use std::collections::BTreeMap;

use seccost::config::{Phase, ScenarioConfig};
use seccost::fixtures;
use seccost::ledger::{AggregationQuery, CostRecord, Ledger, Level};
use seccost::scenarios::onboarding::{Credential, OnboardingPhase};
use seccost::scenarios::temploop::{LoopOrdering, TempLoopConfig};
use seccost::scenarios::{compare_orderings, run, Cps, ScenarioError};
use seccost::simkernel::{EventKind, InteractionTrace, TraceStatus};
use seccost::{ComponentId, Value};

fn config(text: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml_str(text).unwrap()
}

fn id(s: &str) -> ComponentId {
    ComponentId::from(s)
}

fn ms(v: i64) -> Value {
    Value::from(v)
}

fn sum_where(records: &[CostRecord], f: impl Fn(&CostRecord) -> bool) -> Value {
    common::oracle_total(&records.iter().filter(|r| f(r)).cloned().collect::<Vec<_>>())
}

/// Every record has a matching `task_end`, and every security `task_end`
/// has one record per configured metric.
fn assert_ledger_matches_traces(ledger: &Ledger, traces: &[InteractionTrace]) {
    let mut ends: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    for t in traces {
        for (c, task) in t.executed_tasks() {
            if ledger.task(c, task).is_some_and(|s| s.is_security_related()) {
                let metrics = ledger.task(c, task).unwrap().configured_costs().len();
                *ends.entry((t.interaction.to_string(), c.to_string(), task.to_string())).or_default() += metrics;
            }
        }
    }
    let mut recs: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    for r in ledger.records() {
        *recs.entry((r.interaction().to_string(), r.component().to_string(), r.task().to_string())).or_default() += 1;
    }
    assert_eq!(ends, recs);
}

fn assert_monotone(traces: &[InteractionTrace]) {
    for t in traces {
        for w in t.entries.windows(2) {
            assert!(w[0].time <= w[1].time, "{}: time went backwards", t.interaction);
        }
    }
}

#[test]
fn onboarding_reproduces_per_device_and_cloud_sums() {
    let out = run(&config(fixtures::ONBOARDING), 0).unwrap();
    let records = out.records();
    assert_eq!(records.len(), 12);
    for (interaction, device) in [("onboard-1", "1"), ("onboard-2", "2")] {
        let slice: Vec<CostRecord> = records.iter().filter(|r| r.interaction().as_str() == interaction).cloned().collect();
        assert_eq!(slice.len(), 6);
        assert_eq!(sum_where(&slice, |r| r.component().as_str() == device), ms(17));
        assert_eq!(sum_where(&slice, |r| r.component().as_str() == "3"), ms(26));
        let groups = common::oracle_groups(&slice, &[Level::Component, Level::Task, Level::Metric]);
        assert_eq!(groups.len(), 6, "2 components x 3 tasks x 1 metric");
        let device_tasks: Vec<&str> =
            slice.iter().filter(|r| r.component().as_str() == device).map(|r| r.task().as_str()).collect();
        assert_eq!(device_tasks, ["3", "5", "7"]);
    }
    assert_eq!(common::oracle_total(records), ms(86));
    let roll = out.main.ledger.rollup(&[Level::Interaction, Level::Component, Level::Task]).unwrap();
    assert_eq!(roll.node(&["onboard-1", "3", "6"]).unwrap().value(), Some(ms(14)));
    assert_eq!(roll.total().unwrap().value, ms(86));
    assert_ledger_matches_traces(&out.main.ledger, out.traces());
    assert_monotone(out.traces());
}

#[test]
fn temploop_reproduces_component_sums_and_clock() {
    let out = run(&config(fixtures::TEMPLOOP), 0).unwrap();
    let records = out.records();
    assert_eq!(records.len(), 6);
    for (c, v) in [("1", 10), ("2", 9), ("3", 2)] {
        assert_eq!(sum_where(records, |r| r.component().as_str() == c), ms(v));
    }
    assert_eq!(common::oracle_groups(records, &[Level::Component, Level::Task]).len(), 6);
    assert_eq!(out.main.end_time, ms(21), "only security tasks advance the clock");
    assert_eq!(out.setup.as_ref().unwrap().ledger.len(), 12);
    assert_eq!(out.completed(), 1);
    assert_ledger_matches_traces(&out.main.ledger, out.traces());
    assert_monotone(out.traces());
}

#[test]
fn temploop_trace_follows_sequence_diagram() {
    let out = run(&config(fixtures::TEMPLOOP), 0).unwrap();
    let order: Vec<String> = out.traces()[0].executed_tasks().map(|(c, t)| format!("{c}:{t}")).collect();
    assert_eq!(order, ["1:1", "1:2", "1:3", "3:4", "1:5", "1:6", "2:7", "3:8", "2:9", "2:10"]);
}

#[test]
fn missing_device_key_is_rejected_at_step_4() {
    let mut cfg = config(fixtures::ONBOARDING);
    cfg.components[0].missing_credentials.insert(Credential::DeviceKey);
    let mut cps = Cps::new(cfg, 0).unwrap();
    match cps.onboard(&id("1")) {
        Err(ScenarioError::RejectedAtStep { step: 4, .. }) => {}
        other => panic!("expected rejection at 4, got {other:?}"),
    }
    assert!(!cps.trust_registry().contains(&id("1")));
    assert!(matches!(cps.onboarding_state(&id("1")).unwrap().phase, OnboardingPhase::Rejected { step: 4, .. }));
    let log = cps.log(Phase::Onboarding);
    assert_eq!(log.ledger.len(), 2, "tasks 3 and 4 ran and stay charged");
    assert!(matches!(log.traces[0].status, TraceStatus::Aborted(_)));
    assert_ledger_matches_traces(&log.ledger, &log.traces);
}

#[test]
fn missing_sw_key_is_rejected_at_step_6() {
    let mut cfg = config(fixtures::ONBOARDING);
    cfg.components[1].missing_credentials.insert(Credential::LocalCloudSwKey);
    let mut cps = Cps::new(cfg, 0).unwrap();
    assert!(matches!(cps.onboard(&id("2")), Err(ScenarioError::RejectedAtStep { step: 6, .. })));
    assert_eq!(cps.log(Phase::Onboarding).ledger.len(), 4);
}

#[test]
fn onboarding_twice_is_refused() {
    let mut cps = Cps::new(config(fixtures::ONBOARDING), 0).unwrap();
    cps.onboard(&id("1")).unwrap();
    assert!(matches!(cps.onboard(&id("1")), Err(ScenarioError::AlreadyEnrolled(_))));
    assert!(matches!(cps.onboard(&id("3")), Err(ScenarioError::NotADevice(_))));
}

#[test]
fn trust_check_emits_requester_and_cloud_records() {
    let mut cps = Cps::new(config(fixtures::TEMPLOOP), 0).unwrap();
    cps.onboard_all().unwrap();
    assert!(cps.check_trustworthiness(&id("1"), &id("2")).unwrap());
    let records = cps.log(Phase::Control).ledger.records().to_vec();
    let got: Vec<(String, String, Value)> =
        records.iter().map(|r| (r.component().to_string(), r.task().to_string(), r.value())).collect();
    assert_eq!(got, [("1".into(), "3".into(), ms(2)), ("3".into(), "4".into(), ms(1))]);
    assert!(cps.check_trustworthiness(&id("2"), &id("1")).unwrap());
    assert_eq!(cps.log(Phase::Control).ledger.records()[2].task().as_str(), "7");
}

#[test]
fn trust_requires_completed_onboarding() {
    let mut cfg = config(fixtures::TEMPLOOP);
    cfg.components[1].fail_at = Some(7);
    let mut cps = Cps::new(cfg, 0).unwrap();
    cps.onboard_all().unwrap();
    assert!(!cps.check_trustworthiness(&id("1"), &id("2")).unwrap(), "rejected mid-way");
    assert!(matches!(cps.check_trustworthiness(&id("2"), &id("1")), Err(ScenarioError::UntrustedRequester(_))));

    let mut fresh = Cps::new(config(fixtures::TEMPLOOP), 0).unwrap();
    fresh.onboard(&id("1")).unwrap();
    assert!(!fresh.check_trustworthiness(&id("1"), &id("2")).unwrap(), "never on-boarded");
}

#[test]
fn loop_outcomes_by_ordering_and_reading() {
    let cases = [
        (LoopOrdering::Baseline, 25, 6, false),
        (LoopOrdering::Baseline, 30, 6, true),
        (LoopOrdering::LimitFirst, 20, 0, false),
        (LoopOrdering::LimitFirst, 30, 6, true),
    ];
    for (ordering, reading, n, actuated) in cases {
        let mut cps = Cps::new(config(fixtures::TEMPLOOP), 0).unwrap();
        cps.onboard_all().unwrap();
        let report = cps.run_temploop(TempLoopConfig::new(ms(reading), ms(25), ordering), Value::ZERO).unwrap();
        assert_eq!(report.records.len(), n, "{ordering} {reading}");
        assert_eq!(report.actuated, actuated, "{ordering} {reading}");
        assert!(report.trace.is_completed());
        let commands = report.trace.entries.iter().filter(|e| e.kind == EventKind::ActuatorCommand).count();
        assert_eq!(commands, usize::from(actuated));
    }
}

#[test]
fn tampered_ciphertext_aborts_before_limit_check() {
    let mut cfg = config(fixtures::TEMPLOOP);
    cfg.parameters.tamper_link = true;
    let out = run(&cfg, 0).unwrap();
    let trace = &out.traces()[0];
    assert!(matches!(&trace.status, TraceStatus::Aborted(r) if r.contains("decryption")));
    assert!(!trace.executed_tasks().any(|(_, t)| t.as_str() == "10"));
    assert_eq!(out.records().len(), 6, "decrypt is charged although it failed");
    assert!(matches!(out.failures.get(&"temploop-1".into()), Some(ScenarioError::DecryptFailure(_))));
    assert_ledger_matches_traces(&out.main.ledger, out.traces());
}

#[test]
fn untrusted_peer_aborts_before_encryption() {
    let mut cfg = config(fixtures::TEMPLOOP);
    cfg.components[1].fail_at = Some(3);
    let out = run(&cfg, 0).unwrap();
    let tasks: Vec<&str> = out.traces()[0].executed_tasks().map(|(_, t)| t.as_str()).collect();
    assert_eq!(tasks, ["1", "2", "3", "4"]);
    assert!(matches!(out.failures.get(&"onboard-2".into()), Some(ScenarioError::RejectedAtStep { step: 3, .. })));
    assert!(matches!(out.failures.get(&"temploop-1".into()), Some(ScenarioError::TrustFailure { .. })));
}

#[test]
fn orderings_agree_above_limit() {
    let mut cfg = config(fixtures::TEMPLOOP);
    cfg.parameters.reading = Some(ms(30));
    let report = compare_orderings(&cfg, 0, &[Level::Component, Level::Task]).unwrap();
    assert_eq!(report.delta.value, Value::ZERO);
    let mut a = report.baseline.records().to_vec();
    let mut b = report.variant.records().to_vec();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    assert_eq!(report.baseline_rollup, report.variant_rollup);
}

#[test]
fn periodic_savings() {
    let mut cfg = config(fixtures::TEMPLOOP);
    cfg.parameters.reading = Some(ms(20));
    cfg.parameters.periods = 12;
    cfg.parameters.interval = Value::from(300_000);
    let report = compare_orderings(&cfg, 0, &[Level::Interaction]).unwrap();
    assert_eq!(report.baseline_total.value, ms(252));
    assert_eq!(report.variant_total.value, Value::ZERO);
    assert_eq!(report.baseline.traces().len(), 12);
    for t in report.baseline.traces() {
        assert_eq!(sum_where(report.baseline.records(), |r| r.interaction() == &t.interaction), ms(21));
    }
}

#[test]
fn interactions_are_independent() {
    let both = run(&config(fixtures::ONBOARDING), 0).unwrap();
    let mut alone_cfg = config(fixtures::ONBOARDING);
    alone_cfg.components.retain(|c| c.id.as_str() != "1");
    let alone = run(&alone_cfg, 0).unwrap();
    let q = AggregationQuery::new([Level::Component, Level::Task]).unwrap();
    let slice = |records: &[CostRecord]| -> Vec<CostRecord> {
        records.iter().filter(|r| r.interaction().as_str() == "onboard-2").cloned().collect()
    };
    assert_eq!(
        seccost::ledger::total_cost(&slice(both.records()), &q, None).unwrap(),
        seccost::ledger::total_cost(&slice(alone.records()), &q, None).unwrap()
    );
}

#[test]
fn runs_are_deterministic_and_seed_is_echoed() {
    for (_, text) in fixtures::ALL {
        let a = run(&config(text), 7).unwrap();
        let b = run(&config(text), 7).unwrap();
        assert_eq!(a.records(), b.records());
        assert_eq!(a.traces(), b.traces());
        assert_eq!(a.seed, 7);
    }
}

#[test]
fn two_metric_fixture_sums_per_metric() {
    let out = run(&config(fixtures::TWO_METRIC), 0).unwrap();
    let records = out.records();
    assert_eq!(sum_where(records, |r| r.metric().as_str() == "duration"), Value::new(61, 2));
    assert_eq!(sum_where(records, |r| r.metric().as_str() == "cpu_load"), ms(30));
    let roll = out.main.ledger.rollup(&[Level::Metric, Level::Component, Level::Task]).unwrap();
    assert_eq!(roll.total(), None);
    for g in common::oracle_groups(records, &[Level::Metric]) {
        assert_eq!(roll.node(&[g.0[0].as_str()]).unwrap().value(), Some(g.1));
    }
    assert!(out.main.ledger.total_cost(&AggregationQuery::total()).is_err());
    assert_ledger_matches_traces(&out.main.ledger, out.traces());
}

#[test]
fn zero_security_tasks_give_empty_ledger() {
    let text = r#"
scenario = "custom"
[[metric]]
id = "duration"
unit = "ms"
[[component]]
id = "a"
[[component.task]]
id = "1"
kind = "ordinary"
[[interaction]]
id = "x"
steps = ["a:1", "a:1"]
"#;
    let out = run(&config(text), 0).unwrap();
    assert!(out.records().is_empty());
    assert_eq!(out.completed(), 1);
}
