//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use seccost::ids::natural_cmp;
use seccost::ledger::{CostRecord, Level, RollupNode};
use seccost::Value;

fn key_of(r: &CostRecord, level: Level) -> String {
    match level {
        Level::Interaction => r.interaction().to_string(),
        Level::Component => r.component().to_string(),
        Level::Task => r.task().to_string(),
        Level::Metric => r.metric().to_string(),
    }
}

fn keys(r: &CostRecord, levels: &[Level]) -> Vec<String> {
    levels.iter().map(|l| key_of(r, *l)).collect()
}

fn natural_vec_cmp(a: &[String], b: &[String]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| natural_cmp(x, y))
        .find(|o| o.is_ne())
        .unwrap_or(a.len().cmp(&b.len()))
}

/// Group sums by nested loops: collect distinct keys with a linear scan,
/// then rescan every record for each key.
pub fn oracle_groups(records: &[CostRecord], levels: &[Level]) -> Vec<(Vec<String>, Value, usize)> {
    let mut distinct: Vec<Vec<String>> = Vec::new();
    for r in records {
        let k = keys(r, levels);
        if !distinct.contains(&k) {
            distinct.push(k);
        }
    }
    distinct.sort_by(|a, b| natural_vec_cmp(a, b));
    distinct
        .into_iter()
        .map(|k| {
            let mut total = Value::ZERO;
            let mut n = 0;
            for r in records {
                if keys(r, levels) == k {
                    total += r.value();
                    n += 1;
                }
            }
            (k, total, n)
        })
        .collect()
}

pub fn oracle_total(records: &[CostRecord]) -> Value {
    let mut total = Value::ZERO;
    for r in records {
        total += r.value();
    }
    total
}

/// Checks every node of a single-unit roll-up against a rescan of all
/// records matching its path. Returns a description of the first mismatch.
pub fn check_rollup(node: &RollupNode, records: &[CostRecord], levels: &[Level], path: &[String]) -> Result<(), String> {
    let matching: Vec<&CostRecord> = records
        .iter()
        .filter(|r| path.iter().zip(levels).all(|(k, l)| &key_of(r, *l) == k))
        .collect();
    let mut expected = Value::ZERO;
    for r in &matching {
        expected += r.value();
    }
    let got = node.total.as_ref().map(|s| s.value).unwrap_or(Value::ZERO);
    if got != expected || node.records != matching.len() {
        return Err(format!("path {path:?}: got {got} over {} records, oracle {expected} over {}", node.records, matching.len()));
    }
    let Some(level) = levels.get(path.len()) else {
        return if node.children.is_empty() { Ok(()) } else { Err(format!("path {path:?}: leaf has children")) };
    };
    let mut child_keys: Vec<String> = Vec::new();
    for r in &matching {
        let k = key_of(r, *level);
        if !child_keys.contains(&k) {
            child_keys.push(k);
        }
    }
    child_keys.sort_by(|a, b| natural_cmp(a, b));
    let got_keys: Vec<&String> = node.children.iter().map(|c| &c.key).collect();
    if got_keys != child_keys.iter().collect::<Vec<_>>() {
        return Err(format!("path {path:?}: children {got_keys:?}, oracle {child_keys:?}"));
    }
    for c in &node.children {
        let mut p = path.to_vec();
        p.push(c.key.clone());
        check_rollup(c, records, levels, &p)?;
    }
    Ok(())
}

/// A random single-unit ledger of at most `max` records over small id
/// pools, so groups actually collide.
pub fn random_records<R: Rng>(rng: &mut R, max: usize) -> Vec<CostRecord> {
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|_| {
            let value = if rng.gen_bool(0.2) {
                Value::new(rng.gen_range(0..50), rng.gen_range(1..8))
            } else {
                Value::from(rng.gen_range(0..100i64))
            };
            CostRecord::new(
                format!("i{}", rng.gen_range(0..4)).into(),
                format!("c{}", rng.gen_range(0..12)).into(),
                rng.gen_range(1..12).to_string().into(),
                ["duration", "latency"][rng.gen_range(0..2)].into(),
                value,
                "ms".into(),
            )
            .expect("non-negative")
        })
        .collect()
}

/// A random non-empty ordered subset of the four levels.
pub fn random_levels<R: Rng>(rng: &mut R) -> Vec<Level> {
    let mut all = Level::ALL.to_vec();
    all.shuffle(rng);
    all.truncate(rng.gen_range(0..=4));
    all
}
