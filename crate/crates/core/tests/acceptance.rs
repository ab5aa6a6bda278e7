//! Acceptance checks, one PASS/FAIL line each. Exits non-zero on any FAIL.

mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seccost::config::{Phase, ScenarioConfig};
use seccost::export::read_records;
use seccost::fixtures;
use seccost::ledger::{rollup, total_cost, AggregationQuery, CostRecord, LedgerError, Level};
use seccost::scenarios::onboarding::Credential;
use seccost::scenarios::{compare_orderings, run, Cps, ScenarioError};
use seccost::{ComponentId, Value};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn config(text: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml_str(text).expect("shipped fixture")
}

fn sum_of(records: &[CostRecord], f: impl Fn(&CostRecord) -> bool) -> Value {
    common::oracle_total(&records.iter().filter(|r| f(r)).cloned().collect::<Vec<_>>())
}

fn distinct(records: &[CostRecord], f: impl Fn(&CostRecord) -> String) -> usize {
    records.iter().map(f).collect::<BTreeSet<_>>().len()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_seccost")).args(args).output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("seccost {args:?}: {}", String::from_utf8_lossy(&o.stderr)));
    }
    Ok(o.stdout)
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:?}, limit {limit:?}"))
}

fn ac1_onboarding_table() -> Check {
    let start = Instant::now();
    let out = run(&config(fixtures::ONBOARDING), 0).map_err(|e| e.to_string())?;
    let records = out.records();
    for (i, device) in [("onboard-1", "1"), ("onboard-2", "2")] {
        let slice: Vec<CostRecord> = records.iter().filter(|r| r.interaction().as_str() == i).cloned().collect();
        ensure(slice.len() == 6, || format!("{i}: {} records", slice.len()))?;
        let shape = (
            distinct(&slice, |r| r.interaction().to_string()),
            distinct(&slice, |r| r.component().to_string()),
            slice.iter().filter(|r| r.component().as_str() == device).count(),
            distinct(&slice, |r| r.metric().to_string()),
        );
        ensure(shape == (1, 2, 3, 1), || format!("{i}: shape {shape:?}"))?;
        let d = sum_of(&slice, |r| r.component().as_str() == device);
        let c = sum_of(&slice, |r| r.component().as_str() == "3");
        ensure(d == Value::from(17) && c == Value::from(26), || format!("{i}: device {d}, cloud {c}"))?;
    }
    let total = common::oracle_total(records);
    ensure(total == Value::from(86), || format!("total {total}"))?;
    within(start, Duration::from_secs(1))?;
    Ok("device1 17 ms, device2 17 ms, cloud 26 ms per interaction; total 86 ms".into())
}

fn ac2_temploop_table() -> Check {
    let start = Instant::now();
    let out = run(&config(fixtures::TEMPLOOP), 0).map_err(|e| e.to_string())?;
    let records = out.records();
    ensure(records.len() == 6, || format!("{} records", records.len()))?;
    let shape = (
        distinct(records, |r| r.component().to_string()),
        distinct(records, |r| format!("{}:{}", r.component(), r.task())),
        distinct(records, |r| r.metric().to_string()),
    );
    ensure(shape == (3, 6, 1), || format!("shape {shape:?}"))?;
    let sums: Vec<Value> = ["1", "2", "3"].iter().map(|c| sum_of(records, |r| r.component().as_str() == *c)).collect();
    ensure(sums == [10, 9, 2].map(Value::from), || format!("sums {sums:?}"))?;
    let total = common::oracle_total(records);
    ensure(total == Value::from(21), || format!("total {total}"))?;
    let engine = out.main.ledger.rollup(&[Level::Component, Level::Task]).map_err(|e| e.to_string())?;
    ensure(engine.total().map(|s| s.value) == Some(total), || "engine disagrees with oracle".into())?;
    within(start, Duration::from_secs(1))?;
    Ok("sums 10/9/2 ms, total 21 ms, 3 components x 2 tasks x 1 metric".into())
}

fn ac3_compare() -> Check {
    let levels = [Level::Component, Level::Task];
    let mut low = config(fixtures::TEMPLOOP);
    low.parameters.reading = Some(Value::from(20));
    let r = compare_orderings(&low, 0, &levels).map_err(|e| e.to_string())?;
    let got = (r.baseline_total.value, r.variant_total.value, r.delta.value);
    ensure(got == (Value::from(21), Value::ZERO, Value::from(21)), || format!("reading 20: {got:?}"))?;

    let text = cli(&["compare", fixture("temploop.toml").to_str().unwrap(), "--reading", "20"])?;
    let text = String::from_utf8_lossy(&text);
    ensure(text.contains("baseline_total: 21 ms\nlimit_first_total: 0 ms\ndelta: 21 ms"), || format!("cli: {text}"))?;

    let mut high = config(fixtures::TEMPLOOP);
    high.parameters.reading = Some(Value::from(30));
    let r = compare_orderings(&high, 0, &levels).map_err(|e| e.to_string())?;
    ensure(r.delta.value == Value::ZERO, || format!("reading 30: delta {}", r.delta))?;
    let mut a = r.baseline.records().to_vec();
    let mut b = r.variant.records().to_vec();
    a.sort();
    b.sort();
    ensure(a == b, || "reading 30: record multisets differ".into())?;
    Ok("reading 20: 21 vs 0, delta 21 ms; reading 30: delta 0, identical records".into())
}

fn ac4_incompatible_units() -> Check {
    let five = CostRecord::new("i".into(), "c".into(), "1".into(), "duration".into(), Value::from(5), "ms".into())
        .map_err(|e| e.to_string())?;
    let ten = CostRecord::new("i".into(), "c".into(), "2".into(), "cpu_load".into(), Value::from(10), "percent".into())
        .map_err(|e| e.to_string())?;
    let records = [five, ten];
    match total_cost(&records, &AggregationQuery::total(), None) {
        Err(LedgerError::IncompatibleUnits(units)) => {
            let names: Vec<&str> = units.iter().map(|u| u.as_str()).collect();
            ensure(names == ["ms", "percent"], || format!("units {names:?}"))?;
        }
        other => return Err(format!("expected IncompatibleUnits, got {other:?}")),
    }
    let q = AggregationQuery::new([Level::Metric]).map_err(|e| e.to_string())?;
    let agg = total_cost(&records, &q, None).map_err(|e| e.to_string())?;
    ensure(agg.groups.len() == 2, || format!("{} groups", agg.groups.len()))?;
    Ok("5 ms + 10 percent refused with {ms, percent}; grouping by metric succeeds".into())
}

fn ac5_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc5);
    for n in 0..1000 {
        let records = common::random_records(&mut rng, 200);
        let levels = common::random_levels(&mut rng);
        let q = AggregationQuery::new(levels.iter().copied()).map_err(|e| e.to_string())?;
        let agg = total_cost(&records, &q, Some(&"ms".into())).map_err(|e| e.to_string())?;
        let oracle = common::oracle_groups(&records, &levels);
        let got: Vec<(Vec<String>, Value, usize)> =
            agg.groups.iter().map(|g| (g.key.clone(), g.total.value, g.records)).collect();
        ensure(got == oracle, || format!("ledger {n}: total_cost differs from oracle"))?;
        ensure(agg.grand_total.as_ref().map(|s| s.value) == Some(common::oracle_total(&records)), || {
            format!("ledger {n}: grand total differs")
        })?;
        let roll = rollup(&records, &q).map_err(|e| e.to_string())?;
        common::check_rollup(&roll.root, &records, &levels, &[]).map_err(|e| format!("ledger {n}: {e}"))?;

        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rng);
        ensure(total_cost(&shuffled, &q, Some(&"ms".into())).ok() == Some(agg), || format!("ledger {n}: permutation changed total_cost"))?;
        ensure(rollup(&shuffled, &q).ok() == Some(roll), || format!("ledger {n}: permutation changed rollup"))?;
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("1000 random ledgers match the nested-loop oracle in {:?}", start.elapsed()))
}

fn ac6_chain_of_trust() -> Check {
    const RUNS: usize = 600;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc6);
    let devices = [ComponentId::from("1"), ComponentId::from("2")];
    let mut trusted_answers = 0;
    let mut injected = BTreeSet::new();
    for n in 0..RUNS {
        let mut cfg = config(fixtures::TEMPLOOP);
        for c in cfg.components.iter_mut().filter(|c| devices.contains(&c.id)) {
            if rng.gen_bool(0.6) {
                let k = rng.gen_range(3..=8u8);
                injected.insert(k);
                c.fail_at = Some(k);
            }
            for cred in [Credential::DeviceKey, Credential::SwKey, Credential::LocalCloudSwKey] {
                if rng.gen_bool(0.05) {
                    c.missing_credentials.insert(cred);
                }
            }
        }
        let mut cps = Cps::new(cfg, n as u64).map_err(|e| e.to_string())?;
        cps.onboard_all().map_err(|e| format!("run {n}: {e}"))?;

        let log = cps.log(Phase::Onboarding);
        let completed: BTreeSet<ComponentId> = devices
            .iter()
            .filter(|d| {
                let trace = log.trace(&format!("onboard-{d}").into()).expect("each device has a trace");
                let security: BTreeSet<String> =
                    trace.executed_tasks().filter(|(_, t)| !["1", "2"].contains(&t.as_str())).map(|(c, t)| format!("{c}:{t}")).collect();
                trace.is_completed() && security.len() == 6
            })
            .cloned()
            .collect();
        let members: BTreeSet<ComponentId> = cps.trust_registry().members().cloned().collect();
        ensure(members == completed, || format!("run {n}: registry {members:?}, completed {completed:?}"))?;

        for requester in &devices {
            for subject in &devices {
                let answer = cps.check_trustworthiness(requester, subject);
                match (completed.contains(requester), answer) {
                    (true, Ok(v)) => {
                        ensure(v == completed.contains(subject), || {
                            format!("run {n}: {requester} asked about {subject}, got {v}")
                        })?;
                        trusted_answers += usize::from(v);
                    }
                    (false, Err(ScenarioError::UntrustedRequester(_))) => {}
                    (_, other) => return Err(format!("run {n}: {requester} -> {subject}: {other:?}")),
                }
            }
        }
    }
    ensure(injected.len() == 6, || format!("only steps {injected:?} were injected"))?;
    Ok(format!("{RUNS} runs, failures injected at steps 3..=8, {trusted_answers} true answers, no false positives"))
}

fn ac7_determinism() -> Check {
    for (name, _) in fixtures::ALL {
        let path = fixture(name);
        let path = path.to_str().unwrap();
        for emit in ["table", "records"] {
            let a = cli(&["run", path, "--seed", "42", "--emit", emit])?;
            let b = cli(&["run", path, "--seed", "42", "--emit", emit])?;
            ensure(a == b, || format!("{name} --emit {emit}: outputs differ"))?;
        }
    }
    Ok("identical report and records bytes for every fixture".into())
}

fn ac8_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (name, text) in fixtures::ALL {
        let cfg = config(text);
        let levels = cfg.default_levels();
        let q = AggregationQuery::new(levels.clone()).map_err(|e| e.to_string())?;
        let expected = rollup(run(&cfg, 0).map_err(|e| e.to_string())?.records(), &q).map_err(|e| e.to_string())?;

        let file = dir.path().join(format!("{name}.csv"));
        cli(&["run", fixture(name).to_str().unwrap(), "--emit", "records", "--out", file.to_str().unwrap()])?;
        let read = read_records(std::fs::File::open(&file).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let got = rollup(&read, &q).map_err(|e| e.to_string())?;
        ensure(got == expected, || format!("{name}: offline rollup differs"))?;

        let mut args = vec!["aggregate".to_string(), file.to_str().unwrap().to_string()];
        for l in &levels {
            args.extend(["--group-by".to_string(), l.to_string()]);
        }
        let printed = cli(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
        let rendered = seccost::report::render_tables(&expected, None);
        ensure(printed == rendered.as_bytes(), || format!("{name}: aggregate output differs"))?;
    }
    Ok(format!("{} fixtures round-trip field for field", fixtures::ALL.len()))
}

fn main() {
    let checks: [Criterion; 8] = [
        ("AC1 on-boarding cost table", ac1_onboarding_table),
        ("AC2 temperature-loop cost table", ac2_temploop_table),
        ("AC3 ordering what-if", ac3_compare),
        ("AC4 incompatible units", ac4_incompatible_units),
        ("AC5 oracle equivalence", ac5_oracle),
        ("AC6 chain of trust", ac6_chain_of_trust),
        ("AC7 determinism", ac7_determinism),
        ("AC8 records round-trip", ac8_round_trip),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} acceptance checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
