//! The onion-layer cost ledger.
//!
//! A [`CostRecord`] attributes one metric value to an (interaction,
//! component, task, metric) tuple. The total security cost of a system is
//! the sum over all four layers; every partial sum along the way (per
//! interaction, per component, per task, per metric) is a roll-up of the
//! same flat record list. Bounds are never stored: each layer ranges over
//! the distinct ids actually present, so ragged shapes (one component with
//! three tasks, another with two) need no padding.
//!
//! Only security-related tasks ever produce records. The ledger refuses
//! records for ordinary tasks, for undeclared tasks and for values whose
//! unit disagrees with the metric definition.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::ids::{natural_cmp, ComponentId, InteractionId, MetricId, TaskId, Unit};
use crate::metrics::{normalize, MetricRegistry, MetricsError, NormalizerSpec};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("metric '{metric}' is declared in '{expected}' but the record carries '{found}'")]
    UnitMismatch { metric: MetricId, expected: Unit, found: Unit },
    #[error("task '{task}' of component '{component}' is ordinary; ordinary tasks never carry security costs")]
    OrdinaryTaskCost { component: ComponentId, task: TaskId },
    #[error("ordinary task '{0}' cannot have configured costs")]
    CostOnOrdinaryTask(TaskId),
    #[error("unknown metric '{0}'")]
    UnknownMetric(MetricId),
    #[error("task '{task}' is not declared for component '{component}'")]
    UnknownTask { component: ComponentId, task: TaskId },
    #[error("task '{task}' of component '{component}' is already declared with a different definition")]
    ConflictingTask { component: ComponentId, task: TaskId },
    #[error("cost values must be non-negative, got {0}")]
    NegativeValue(Value),
    #[error("value {value} is outside the domain of metric '{metric}'")]
    DomainViolation { metric: MetricId, value: Value },
    #[error("cannot sum across incompatible units {}", fmt_units(.0))]
    IncompatibleUnits(BTreeSet<Unit>),
    #[error("grouping level '{0}' appears more than once")]
    DuplicateLevel(Level),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn fmt_units(units: &BTreeSet<Unit>) -> String {
    let list: Vec<&str> = units.iter().map(Unit::as_str).collect();
    format!("{{{}}}", list.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Ordinary,
    #[serde(alias = "security")]
    SecurityRelated,
}

impl TaskKind {
    pub fn is_security_related(&self) -> bool {
        matches!(self, TaskKind::SecurityRelated)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Ordinary => "ordinary",
            TaskKind::SecurityRelated => "security_related",
        })
    }
}

/// A task a component can execute. Only security-related tasks may carry
/// configured costs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    id: TaskId,
    label: String,
    kind: TaskKind,
    configured_costs: BTreeMap<MetricId, Value>,
}

impl TaskSpec {
    pub fn ordinary(id: impl Into<TaskId>, label: impl Into<String>) -> Self {
        TaskSpec {
            id: id.into(),
            label: label.into(),
            kind: TaskKind::Ordinary,
            configured_costs: BTreeMap::new(),
        }
    }

    pub fn security(
        id: impl Into<TaskId>,
        label: impl Into<String>,
        costs: impl IntoIterator<Item = (MetricId, Value)>,
    ) -> Result<Self, LedgerError> {
        Self::new(id, label, TaskKind::SecurityRelated, costs)
    }

    pub fn new(
        id: impl Into<TaskId>,
        label: impl Into<String>,
        kind: TaskKind,
        costs: impl IntoIterator<Item = (MetricId, Value)>,
    ) -> Result<Self, LedgerError> {
        let id = id.into();
        let configured_costs: BTreeMap<MetricId, Value> = costs.into_iter().collect();
        if let Some(v) = configured_costs.values().find(|v| v.is_negative()) {
            return Err(LedgerError::NegativeValue(*v));
        }
        if kind == TaskKind::Ordinary && !configured_costs.is_empty() {
            return Err(LedgerError::CostOnOrdinaryTask(id));
        }
        Ok(TaskSpec { id, label: label.into(), kind, configured_costs })
    }

    pub fn id(&self) -> &TaskId {
        &self.id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn is_security_related(&self) -> bool {
        self.kind.is_security_related()
    }

    pub fn configured_costs(&self) -> &BTreeMap<MetricId, Value> {
        &self.configured_costs
    }

    pub fn cost(&self, metric: &MetricId) -> Option<Value> {
        self.configured_costs.get(metric).copied()
    }
}

/// Splits task specs into (security-related, ordinary), preserving order.
pub fn classify_tasks(specs: &[TaskSpec]) -> (Vec<TaskSpec>, Vec<TaskSpec>) {
    specs.iter().cloned().partition(TaskSpec::is_security_related)
}

/// One measurement: the value of one metric for one task executed by one
/// component within one interaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CostRecord {
    interaction: InteractionId,
    component: ComponentId,
    task: TaskId,
    metric: MetricId,
    value: Value,
    unit: Unit,
}

impl CostRecord {
    pub fn new(
        interaction: InteractionId,
        component: ComponentId,
        task: TaskId,
        metric: MetricId,
        value: Value,
        unit: Unit,
    ) -> Result<Self, LedgerError> {
        if value.is_negative() {
            return Err(LedgerError::NegativeValue(value));
        }
        Ok(CostRecord { interaction, component, task, metric, value, unit })
    }

    pub fn interaction(&self) -> &InteractionId {
        &self.interaction
    }

    pub fn component(&self) -> &ComponentId {
        &self.component
    }

    pub fn task(&self) -> &TaskId {
        &self.task
    }

    pub fn metric(&self) -> &MetricId {
        &self.metric
    }

    pub fn value(&self) -> Value {
        self.value
    }

    pub fn unit(&self) -> &Unit {
        &self.unit
    }

    /// Same coordinates, value multiplied by `factor`, relabelled to `unit`.
    /// `factor` must be non-negative.
    pub fn rescaled(&self, factor: Value, unit: Unit) -> CostRecord {
        debug_assert!(!factor.is_negative());
        CostRecord { value: self.value * factor, unit, ..self.clone() }
    }

    pub fn key(&self, level: Level) -> &str {
        match level {
            Level::Interaction => self.interaction.as_str(),
            Level::Component => self.component.as_str(),
            Level::Task => self.task.as_str(),
            Level::Metric => self.metric.as_str(),
        }
    }
}

/// One of the four onion layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Interaction,
    Component,
    Task,
    Metric,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Interaction, Level::Component, Level::Task, Level::Metric];

    pub fn title(&self) -> &'static str {
        match self {
            Level::Interaction => "Interaction",
            Level::Component => "Component",
            Level::Task => "Task",
            Level::Metric => "Metric",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Interaction => "interaction",
            Level::Component => "component",
            Level::Task => "task",
            Level::Metric => "metric",
        })
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interaction" => Ok(Level::Interaction),
            "component" => Ok(Level::Component),
            "task" => Ok(Level::Task),
            "metric" => Ok(Level::Metric),
            other => Err(format!("unknown level '{other}' (expected interaction, component, task or metric)")),
        }
    }
}

pub fn check_levels(levels: &[Level]) -> Result<(), LedgerError> {
    let mut seen = BTreeSet::new();
    for l in levels {
        if !seen.insert(*l) {
            return Err(LedgerError::DuplicateLevel(*l));
        }
    }
    Ok(())
}

/// Optional id whitelists per layer. `None` lets everything through.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordFilter {
    pub interactions: Option<BTreeSet<InteractionId>>,
    pub components: Option<BTreeSet<ComponentId>>,
    pub tasks: Option<BTreeSet<TaskId>>,
    pub metrics: Option<BTreeSet<MetricId>>,
}

impl RecordFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn interaction(mut self, id: impl Into<InteractionId>) -> Self {
        self.interactions.get_or_insert_with(BTreeSet::new).insert(id.into());
        self
    }

    pub fn component(mut self, id: impl Into<ComponentId>) -> Self {
        self.components.get_or_insert_with(BTreeSet::new).insert(id.into());
        self
    }

    pub fn task(mut self, id: impl Into<TaskId>) -> Self {
        self.tasks.get_or_insert_with(BTreeSet::new).insert(id.into());
        self
    }

    pub fn metric(mut self, id: impl Into<MetricId>) -> Self {
        self.metrics.get_or_insert_with(BTreeSet::new).insert(id.into());
        self
    }

    pub fn matches(&self, r: &CostRecord) -> bool {
        fn ok<T: Ord>(set: &Option<BTreeSet<T>>, v: &T) -> bool {
            set.as_ref().is_none_or(|s| s.contains(v))
        }
        ok(&self.interactions, &r.interaction)
            && ok(&self.components, &r.component)
            && ok(&self.tasks, &r.task)
            && ok(&self.metrics, &r.metric)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AggregationQuery {
    filter: RecordFilter,
    group_by: Vec<Level>,
    normalizer: Option<NormalizerSpec>,
}

impl AggregationQuery {
    pub fn new(group_by: impl IntoIterator<Item = Level>) -> Result<Self, LedgerError> {
        let group_by: Vec<Level> = group_by.into_iter().collect();
        check_levels(&group_by)?;
        Ok(AggregationQuery { group_by, ..Default::default() })
    }

    /// Grand total only, no grouping.
    pub fn total() -> Self {
        Self::default()
    }

    pub fn with_filter(mut self, filter: RecordFilter) -> Self {
        self.filter = filter;
        self
    }

    /// Maps matched records onto one unit before summing.
    pub fn normalize_with(mut self, spec: NormalizerSpec) -> Self {
        self.normalizer = Some(spec);
        self
    }

    pub fn filter(&self) -> &RecordFilter {
        &self.filter
    }

    pub fn group_by(&self) -> &[Level] {
        &self.group_by
    }

    pub fn normalizer(&self) -> Option<&NormalizerSpec> {
        self.normalizer.as_ref()
    }

    fn select(&self, records: &[CostRecord]) -> Result<Vec<CostRecord>, LedgerError> {
        let matched: Vec<CostRecord> = records.iter().filter(|r| self.filter.matches(r)).cloned().collect();
        match &self.normalizer {
            Some(spec) => Ok(normalize(&matched, spec)?),
            None => Ok(matched),
        }
    }
}

/// A value together with its unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sum {
    pub value: Value,
    pub unit: Unit,
}

impl Sum {
    pub fn new(value: Value, unit: impl Into<Unit>) -> Self {
        Sum { value, unit: unit.into() }
    }

    /// Compares two sums. Different units cannot be ordered.
    pub fn try_cmp(&self, other: &Sum) -> Result<Ordering, LedgerError> {
        if self.unit != other.unit {
            return Err(LedgerError::IncompatibleUnits([self.unit.clone(), other.unit.clone()].into()));
        }
        Ok(self.value.cmp(&other.value))
    }
}

impl fmt::Display for Sum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.value, self.unit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupTotal {
    pub key: Vec<String>,
    pub total: Sum,
    pub records: usize,
}

/// Result of [`total_cost`]. Groups are sorted by key in natural order, so
/// the result does not depend on record insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostAggregate {
    pub group_by: Vec<Level>,
    pub groups: Vec<GroupTotal>,
    pub grand_total: Option<Sum>,
}

impl CostAggregate {
    pub fn group(&self, key: &[&str]) -> Option<&GroupTotal> {
        self.groups.iter().find(|g| g.key.iter().map(String::as_str).eq(key.iter().copied()))
    }
}

fn cmp_keys(a: &[String], b: &[String]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = natural_cmp(x, y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Sums the records matching `query`, grouped by `query.group_by`.
///
/// Each group must be unit-homogeneous, otherwise the sum is refused with
/// [`LedgerError::IncompatibleUnits`]. The grand total is present only when
/// one unit spans every matched record; for an empty selection it is
/// `(0, unit)` when `unit_hint` (or the normalizer) names the unit.
pub fn total_cost(
    records: &[CostRecord],
    query: &AggregationQuery,
    unit_hint: Option<&Unit>,
) -> Result<CostAggregate, LedgerError> {
    let selected = query.select(records)?;

    let mut buckets: BTreeMap<Vec<String>, (BTreeSet<Unit>, Value, usize)> = BTreeMap::new();
    for r in &selected {
        let key: Vec<String> = query.group_by.iter().map(|l| r.key(*l).to_string()).collect();
        let slot = buckets.entry(key).or_insert_with(|| (BTreeSet::new(), Value::ZERO, 0));
        slot.0.insert(r.unit.clone());
        slot.1 += r.value;
        slot.2 += 1;
    }

    let mut groups = Vec::with_capacity(buckets.len());
    for (key, (units, value, count)) in buckets {
        if units.len() > 1 {
            return Err(LedgerError::IncompatibleUnits(units));
        }
        let unit = units.into_iter().next().expect("non-empty bucket has a unit");
        groups.push(GroupTotal { key, total: Sum { value, unit }, records: count });
    }
    groups.sort_by(|a, b| cmp_keys(&a.key, &b.key));

    let units: BTreeSet<&Unit> = groups.iter().map(|g| &g.total.unit).collect();
    let grand_total = match units.len() {
        0 => query
            .normalizer
            .as_ref()
            .map(|n| n.output_unit())
            .or(unit_hint)
            .map(|u| Sum::new(Value::ZERO, u.clone())),
        1 => {
            let unit = (*units.iter().next().unwrap()).clone();
            Some(Sum { value: groups.iter().map(|g| g.total.value).sum(), unit })
        }
        _ => None,
    };

    Ok(CostAggregate { group_by: query.group_by.clone(), groups, grand_total })
}

/// One node of a roll-up tree. `total` is absent when the subtree mixes
/// units (possible only above a `metric` level).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RollupNode {
    pub level: Option<Level>,
    pub key: String,
    pub total: Option<Sum>,
    pub records: usize,
    pub children: Vec<RollupNode>,
}

impl RollupNode {
    pub fn child(&self, key: &str) -> Option<&RollupNode> {
        self.children.iter().find(|c| c.key == key)
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn value(&self) -> Option<Value> {
        self.total.as_ref().map(|s| s.value)
    }
}

/// Nested sums, outermost level first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rollup {
    pub levels: Vec<Level>,
    pub root: RollupNode,
}

impl Rollup {
    pub fn node(&self, path: &[&str]) -> Option<&RollupNode> {
        path.iter().try_fold(&self.root, |n, k| n.child(k))
    }

    pub fn total(&self) -> Option<&Sum> {
        self.root.total.as_ref()
    }

    /// All distinct units that appear anywhere in the tree.
    pub fn units(&self) -> BTreeSet<Unit> {
        fn walk(n: &RollupNode, out: &mut BTreeSet<Unit>) {
            if let Some(t) = &n.total {
                out.insert(t.unit.clone());
            }
            n.children.iter().for_each(|c| walk(c, out));
        }
        let mut out = BTreeSet::new();
        walk(&self.root, &mut out);
        out
    }
}

/// Builds the nested roll-up for `query.group_by` over the matching records.
///
/// Every internal node's value is the sum of its children; innermost nodes
/// hold the sum of their records and must be unit-homogeneous.
pub fn rollup(records: &[CostRecord], query: &AggregationQuery) -> Result<Rollup, LedgerError> {
    let selected = query.select(records)?;
    let refs: Vec<&CostRecord> = selected.iter().collect();
    let root = build_node(None, String::new(), &refs, &query.group_by)?;
    Ok(Rollup { levels: query.group_by.clone(), root })
}

fn build_node(
    level: Option<Level>,
    key: String,
    records: &[&CostRecord],
    remaining: &[Level],
) -> Result<RollupNode, LedgerError> {
    let units: BTreeSet<Unit> = records.iter().map(|r| r.unit.clone()).collect();

    let Some((&next, rest)) = remaining.split_first() else {
        if units.len() > 1 {
            return Err(LedgerError::IncompatibleUnits(units));
        }
        let total = units.into_iter().next().map(|unit| Sum { value: records.iter().map(|r| r.value).sum(), unit });
        return Ok(RollupNode { level, key, total, records: records.len(), children: Vec::new() });
    };

    let mut parts: BTreeMap<&str, Vec<&CostRecord>> = BTreeMap::new();
    for r in records {
        parts.entry(r.key(next)).or_default().push(r);
    }
    let mut keys: Vec<&str> = parts.keys().copied().collect();
    keys.sort_by(|a, b| natural_cmp(a, b));

    let children = keys
        .into_iter()
        .map(|k| build_node(Some(next), k.to_string(), &parts[k], rest))
        .collect::<Result<Vec<_>, _>>()?;

    let total = if units.len() == 1 {
        let unit = units.into_iter().next().unwrap();
        let value = children.iter().filter_map(|c| c.value()).sum();
        Some(Sum { value, unit })
    } else {
        None
    };
    Ok(RollupNode { level, key, total, records: records.len(), children })
}

/// Append-only store of cost records, validated against a metric registry
/// and a per-component task catalog.
#[derive(Debug, Clone)]
pub struct Ledger {
    registry: Arc<MetricRegistry>,
    tasks: BTreeMap<(ComponentId, TaskId), TaskSpec>,
    records: Vec<CostRecord>,
}

impl Ledger {
    pub fn new(registry: Arc<MetricRegistry>) -> Self {
        Ledger { registry, tasks: BTreeMap::new(), records: Vec::new() }
    }

    pub fn registry(&self) -> &Arc<MetricRegistry> {
        &self.registry
    }

    /// Registers `spec` as a task of `component`. Re-declaring an identical
    /// spec is a no-op.
    pub fn declare_task(&mut self, component: &ComponentId, spec: &TaskSpec) -> Result<(), LedgerError> {
        for metric in spec.configured_costs.keys() {
            if !self.registry.contains(metric) {
                return Err(LedgerError::UnknownMetric(metric.clone()));
            }
        }
        let key = (component.clone(), spec.id.clone());
        match self.tasks.get(&key) {
            Some(existing) if existing != spec => {
                Err(LedgerError::ConflictingTask { component: key.0, task: key.1 })
            }
            Some(_) => Ok(()),
            None => {
                self.tasks.insert(key, spec.clone());
                Ok(())
            }
        }
    }

    pub fn task(&self, component: &ComponentId, task: &TaskId) -> Option<&TaskSpec> {
        self.tasks.get(&(component.clone(), task.clone()))
    }

    /// Appends a record and returns its index.
    pub fn record(&mut self, record: CostRecord) -> Result<usize, LedgerError> {
        let def = self
            .registry
            .get(&record.metric)
            .ok_or_else(|| LedgerError::UnknownMetric(record.metric.clone()))?;
        if def.unit != record.unit {
            return Err(LedgerError::UnitMismatch {
                metric: record.metric.clone(),
                expected: def.unit.clone(),
                found: record.unit.clone(),
            });
        }
        if !def.domain.admits(record.value) {
            return Err(LedgerError::DomainViolation { metric: record.metric.clone(), value: record.value });
        }
        let spec = self.task(&record.component, &record.task).ok_or_else(|| LedgerError::UnknownTask {
            component: record.component.clone(),
            task: record.task.clone(),
        })?;
        if !spec.is_security_related() {
            return Err(LedgerError::OrdinaryTaskCost {
                component: record.component.clone(),
                task: record.task.clone(),
            });
        }
        self.records.push(record);
        Ok(self.records.len() - 1)
    }

    pub fn records(&self) -> &[CostRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records appended at or after `index`.
    pub fn since(&self, index: usize) -> &[CostRecord] {
        &self.records[index.min(self.records.len())..]
    }

    /// The unit of an empty selection, inferred from the filter's metrics.
    fn inferred_unit(&self, filter: &RecordFilter) -> Option<Unit> {
        filter.metrics.as_ref().and_then(|m| self.registry.common_unit(m))
    }

    pub fn total_cost(&self, query: &AggregationQuery) -> Result<CostAggregate, LedgerError> {
        let hint = self.inferred_unit(&query.filter);
        total_cost(&self.records, query, hint.as_ref())
    }

    pub fn rollup(&self, levels: &[Level]) -> Result<Rollup, LedgerError> {
        rollup(&self.records, &AggregationQuery::new(levels.iter().copied())?)
    }

    pub fn rollup_query(&self, query: &AggregationQuery) -> Result<Rollup, LedgerError> {
        rollup(&self.records, query)
    }
}
