//! Metric definitions, unit compatibility and the normalization hook.
//!
//! Units are opaque tags. Two records can be summed only when their tags are
//! equal; the crate never converts between units on its own. A caller that
//! wants to compare `5 ms + 10 %` against `10 ms + 5 %` must supply a
//! [`NormalizerSpec`] that states, explicitly, how each unit maps onto a
//! common scale. No default weights exist.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Deserialize;
use thiserror::Error;

use crate::ids::{MetricId, Unit};
use crate::ledger::CostRecord;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("metric '{0}' is already registered")]
    DuplicateMetric(MetricId),
    #[error("unit '{0}' is not covered by the normalizer")]
    UnknownUnit(Unit),
    #[error("invalid normalizer: {0}")]
    InvalidNormalizer(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    #[serde(alias = "non_negative")]
    NonNegativeRational,
    #[serde(rename = "percentage_0_100", alias = "percentage")]
    Percentage0To100,
}

impl ValueDomain {
    pub fn admits(&self, v: Value) -> bool {
        match self {
            ValueDomain::NonNegativeRational => !v.is_negative(),
            ValueDomain::Percentage0To100 => !v.is_negative() && v <= Value::from(100),
        }
    }
}

impl fmt::Display for ValueDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueDomain::NonNegativeRational => "non_negative_rational",
            ValueDomain::Percentage0To100 => "percentage_0_100",
        })
    }
}

/// Whether a metric's values come from the configuration or from a clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    Configured,
    Measured,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricDef {
    pub id: MetricId,
    pub name: String,
    pub unit: Unit,
    pub domain: ValueDomain,
    pub mode: SamplingMode,
}

impl MetricDef {
    pub fn new(id: impl Into<MetricId>, unit: impl Into<Unit>) -> Self {
        let id = id.into();
        MetricDef {
            name: id.to_string(),
            id,
            unit: unit.into(),
            domain: ValueDomain::NonNegativeRational,
            mode: SamplingMode::Configured,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_domain(mut self, domain: ValueDomain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_mode(mut self, mode: SamplingMode) -> Self {
        self.mode = mode;
        self
    }

    /// Duration in milliseconds, the metric both use cases are evaluated with.
    pub fn duration_ms() -> Self {
        MetricDef::new("duration", "ms").with_name("Duration")
    }

    pub fn cpu_load_percent() -> Self {
        MetricDef::new("cpu_load", "percent")
            .with_name("CPU load")
            .with_domain(ValueDomain::Percentage0To100)
            .with_mode(SamplingMode::Measured)
    }
}

/// Write-once registry of metric definitions. Once setup is done it is
/// typically wrapped in an `Arc` and shared read-only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricRegistry {
    defs: BTreeMap<MetricId, MetricDef>,
}

impl MetricRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, def: MetricDef) -> Result<(), MetricsError> {
        if self.defs.contains_key(&def.id) {
            return Err(MetricsError::DuplicateMetric(def.id));
        }
        self.defs.insert(def.id.clone(), def);
        Ok(())
    }

    pub fn get(&self, id: &MetricId) -> Option<&MetricDef> {
        self.defs.get(id)
    }

    pub fn contains(&self, id: &MetricId) -> bool {
        self.defs.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MetricDef> {
        self.defs.values()
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    /// The common unit of `ids`, if they all resolve and agree.
    pub fn common_unit<'a>(&self, ids: impl IntoIterator<Item = &'a MetricId>) -> Option<Unit> {
        let mut units = ids.into_iter().map(|id| self.get(id).map(|d| &d.unit));
        let first = units.next()??;
        units
            .all(|u| u == Some(first))
            .then(|| first.clone())
    }
}

/// Outcome of a unit compatibility check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Aggregatable {
    /// All records share this unit. `None` for an empty input.
    Ok(Option<Unit>),
    Incompatible(BTreeSet<Unit>),
}

impl Aggregatable {
    pub fn is_ok(&self) -> bool {
        matches!(self, Aggregatable::Ok(_))
    }
}

pub fn check_aggregatable<'a>(records: impl IntoIterator<Item = &'a CostRecord>) -> Aggregatable {
    let units: BTreeSet<Unit> = records.into_iter().map(|r| r.unit().clone()).collect();
    match units.len() {
        0 => Aggregatable::Ok(None),
        1 => Aggregatable::Ok(units.into_iter().next()),
        _ => Aggregatable::Incompatible(units),
    }
}

/// A user-supplied weighted linear map from several units onto one.
///
/// The set of input units is the key set of `weights`, so the two can never
/// disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizerSpec {
    output_unit: Unit,
    weights: BTreeMap<Unit, Value>,
}

impl NormalizerSpec {
    pub fn new(
        output_unit: impl Into<Unit>,
        weights: impl IntoIterator<Item = (Unit, Value)>,
    ) -> Result<Self, MetricsError> {
        let mut map = BTreeMap::new();
        for (unit, w) in weights {
            if w.is_negative() || w.is_zero() {
                return Err(MetricsError::InvalidNormalizer(format!(
                    "weight for '{unit}' must be strictly positive, got {w}"
                )));
            }
            if map.insert(unit.clone(), w).is_some() {
                return Err(MetricsError::InvalidNormalizer(format!("unit '{unit}' listed twice")));
            }
        }
        if map.is_empty() {
            return Err(MetricsError::InvalidNormalizer("no input units".into()));
        }
        Ok(NormalizerSpec { output_unit: output_unit.into(), weights: map })
    }

    pub fn output_unit(&self) -> &Unit {
        &self.output_unit
    }

    pub fn input_units(&self) -> impl Iterator<Item = &Unit> {
        self.weights.keys()
    }

    pub fn weight(&self, unit: &Unit) -> Option<Value> {
        self.weights.get(unit).copied()
    }
}

/// Maps every record onto `spec.output_unit`, value-wise `weight[unit] * v`.
/// Order and length are preserved.
pub fn normalize(records: &[CostRecord], spec: &NormalizerSpec) -> Result<Vec<CostRecord>, MetricsError> {
    records
        .iter()
        .map(|r| {
            let w = spec.weight(r.unit()).ok_or_else(|| MetricsError::UnknownUnit(r.unit().clone()))?;
            Ok(r.rescaled(w, spec.output_unit.clone()))
        })
        .collect()
}

/// A monotonic clock reading in the clock metric's base unit.
pub trait Clock {
    fn now(&self) -> Value;
}

/// Simulated clock. Time moves only when [`SimClock::advance`] is called.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now: Value,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(now: Value) -> Self {
        debug_assert!(!now.is_negative());
        SimClock { now }
    }

    /// Panics on a negative step; the clock never runs backwards.
    pub fn advance(&mut self, by: Value) {
        assert!(!by.is_negative(), "simulated clock cannot move backwards (step {by})");
        self.now += by;
    }

    /// Moves the clock forward to `t` if `t` is later than now.
    pub fn advance_to(&mut self, t: Value) {
        if t > self.now {
            self.now = t;
        }
    }
}

impl Clock for SimClock {
    fn now(&self) -> Value {
        self.now
    }
}

/// Wall clock reporting elapsed milliseconds (microsecond resolution) since
/// construction. Only used for `measured` runs outside the test suite.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock { origin: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> Value {
        let micros = self.origin.elapsed().as_micros() as i128;
        Value::new(micros, 1000)
    }
}

/// Runs `thunk` and reports how far `clock` moved while it ran.
///
/// The thunk receives the clock so simulated work can advance it.
pub fn timer_sample<C: Clock, T>(clock: &mut C, thunk: impl FnOnce(&mut C) -> T) -> (T, Value) {
    let before = clock.now();
    let out = thunk(clock);
    let after = clock.now();
    debug_assert!(after >= before, "clock went backwards");
    (out, after - before)
}

impl FromStr for ValueDomain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "non_negative_rational" | "non_negative" => Ok(ValueDomain::NonNegativeRational),
            "percentage_0_100" | "percentage" => Ok(ValueDomain::Percentage0To100),
            other => Err(format!("unknown value domain '{other}'")),
        }
    }
}
