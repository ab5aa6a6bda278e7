//! Scenario configuration files.
//!
//! Scenarios are TOML documents with explicit sections; the grammar is
//! documented in the repository README. [`load_scenario`] parses a file and
//! checks every invariant before returning, so a [`ScenarioConfig`] in hand
//! is always runnable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::ids::{ComponentId, InteractionId, MetricId, TaskId, Unit};
use crate::ledger::{check_levels, Level, TaskKind, TaskSpec};
use crate::metrics::{MetricDef, MetricRegistry, SamplingMode, ValueDomain};
use crate::scenarios::onboarding::Credential;
use crate::scenarios::temploop::LoopOrdering;
use crate::simkernel::Capability;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: IoErrorKind },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario [{invariant}]: {detail}")]
    Validation { invariant: &'static str, detail: String },
}

/// `std::io::Error` is neither `Clone` nor `Eq`; keep what matters.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct IoErrorKind(pub String);

fn invalid(invariant: &'static str, detail: impl Into<String>) -> ConfigError {
    ConfigError::Validation { invariant, detail: detail.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Onboarding,
    Temploop,
    Custom,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Onboarding => "onboarding",
            ScenarioKind::Temploop => "temploop",
            ScenarioKind::Custom => "custom",
        })
    }
}

/// Which procedure a task table belongs to. Temperature-control scenarios
/// on-board their devices first, so one component can own two tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Onboarding,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Device,
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    #[default]
    Table,
    Records,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentConfig {
    pub id: ComponentId,
    pub label: String,
    pub role: Option<Role>,
    pub capabilities: BTreeSet<Capability>,
    pub onboarding_tasks: Vec<TaskSpec>,
    pub control_tasks: Vec<TaskSpec>,
    /// Device credentials that are absent (all present by default).
    pub missing_credentials: BTreeSet<Credential>,
    /// Injected failure at on-boarding step 3..=8.
    pub fail_at: Option<u8>,
}

impl ComponentConfig {
    pub fn tasks(&self, phase: Phase) -> &[TaskSpec] {
        match phase {
            Phase::Onboarding => &self.onboarding_tasks,
            Phase::Control => &self.control_tasks,
        }
    }

    fn has_task(&self, phase: Phase, id: &str) -> bool {
        self.tasks(phase).iter().any(|t| t.id().as_str() == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parameters {
    pub reading: Option<Value>,
    pub limit: Option<Value>,
    pub ordering: LoopOrdering,
    pub periods: u32,
    /// Simulated time between two control periods, in clock units.
    pub interval: Value,
    pub sensor: Option<ComponentId>,
    pub actuator: Option<ComponentId>,
    /// Latency applied to every link, in clock units.
    pub latency: Value,
    pub tamper_link: bool,
}

impl Default for Parameters {
    fn default() -> Self {
        Parameters {
            reading: None,
            limit: None,
            ordering: LoopOrdering::Baseline,
            periods: 1,
            interval: Value::ZERO,
            sensor: None,
            actuator: None,
            latency: Value::ZERO,
            tamper_link: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OutputOptions {
    pub emit: Emit,
    pub group_by: Option<Vec<Level>>,
}

/// One scripted interaction of a `custom` scenario: tasks run in order,
/// control passing between components as messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedInteraction {
    pub id: InteractionId,
    pub steps: Vec<(ComponentId, TaskId)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub metrics: Vec<MetricDef>,
    pub clock_metric: Option<MetricId>,
    pub components: Vec<ComponentConfig>,
    pub parameters: Parameters,
    pub output: OutputOptions,
    pub interactions: Vec<ScriptedInteraction>,
}

pub const ONBOARDING_DEVICE_TASKS: [&str; 4] = ["1", "3", "5", "7"];
pub const ONBOARDING_CLOUD_TASKS: [&str; 4] = ["2", "4", "6", "8"];
pub const SENSOR_TASKS: [&str; 6] = ["1", "2", "3", "5", "6", "10"];
pub const ACTUATOR_TASKS: [&str; 4] = ["7", "9", "10", "11"];
pub const CLOUD_TRUST_TASKS: [&str; 2] = ["4", "8"];

impl ScenarioConfig {
    pub fn registry(&self) -> Arc<MetricRegistry> {
        let mut reg = MetricRegistry::new();
        for m in &self.metrics {
            // Uniqueness is a validated invariant.
            let _ = reg.register(m.clone());
        }
        Arc::new(reg)
    }

    pub fn component(&self, id: &ComponentId) -> Option<&ComponentConfig> {
        self.components.iter().find(|c| &c.id == id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &ComponentConfig> {
        self.components.iter().filter(|c| c.role == Some(Role::Device))
    }

    pub fn cloud(&self) -> Option<&ComponentConfig> {
        self.components.iter().find(|c| c.role == Some(Role::Cloud))
    }

    /// Sensor device for the control loop: explicit parameter, else the
    /// first declared device.
    pub fn sensor(&self) -> Option<&ComponentConfig> {
        match &self.parameters.sensor {
            Some(id) => self.component(id),
            None => self.devices().next(),
        }
    }

    /// Actuator device: explicit parameter, else the second declared device.
    pub fn actuator(&self) -> Option<&ComponentConfig> {
        match &self.parameters.actuator {
            Some(id) => self.component(id),
            None => self.devices().nth(1),
        }
    }

    pub fn unit_of(&self, metric: &MetricId) -> Option<&Unit> {
        self.metrics.iter().find(|m| &m.id == metric).map(|m| &m.unit)
    }

    /// Default roll-up levels for reports of this scenario.
    pub fn default_levels(&self) -> Vec<Level> {
        if let Some(levels) = &self.output.group_by {
            return levels.clone();
        }
        let mut levels = match self.kind {
            ScenarioKind::Onboarding => vec![Level::Interaction, Level::Component, Level::Task],
            ScenarioKind::Temploop if self.parameters.periods > 1 => {
                vec![Level::Interaction, Level::Component, Level::Task]
            }
            ScenarioKind::Temploop => vec![Level::Component, Level::Task],
            ScenarioKind::Custom => vec![Level::Component, Level::Task],
        };
        let units: BTreeSet<&Unit> = self.metrics.iter().map(|m| &m.unit).collect();
        if units.len() > 1 {
            levels.insert(0, Level::Metric);
        }
        levels
    }

    /// Checks every invariant a runnable scenario must satisfy.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut metric_ids = BTreeSet::new();
        for m in &self.metrics {
            if !metric_ids.insert(&m.id) {
                return Err(invalid("unique-metric-id", format!("metric '{}' is defined twice", m.id)));
            }
        }
        if let Some(clock) = &self.clock_metric {
            if !metric_ids.contains(clock) {
                return Err(invalid("metric-defined", format!("clock_metric '{clock}' is not defined in [[metric]]")));
            }
        }

        let mut component_ids = BTreeSet::new();
        for c in &self.components {
            if !component_ids.insert(&c.id) {
                return Err(invalid("unique-component-id", format!("component '{}' is declared twice", c.id)));
            }
            for phase in [Phase::Onboarding, Phase::Control] {
                let mut seen = BTreeSet::new();
                for t in c.tasks(phase) {
                    if !seen.insert(t.id()) {
                        return Err(invalid(
                            "unique-task-id",
                            format!("task '{}' of component '{}' is declared twice", t.id(), c.id),
                        ));
                    }
                    self.validate_task(c, t)?;
                }
            }
            if let Some(k) = c.fail_at {
                if !(3..=8).contains(&k) {
                    return Err(invalid("fail-at-range", format!("fail_at of component '{}' must be 3..=8, got {k}", c.id)));
                }
            }
        }

        if let Some(levels) = &self.output.group_by {
            check_levels(levels).map_err(|e| invalid("unique-group-level", e.to_string()))?;
        }
        if self.parameters.periods == 0 {
            return Err(invalid("periods-positive", "parameters.periods must be at least 1"));
        }
        if self.parameters.latency.is_negative() || self.parameters.interval.is_negative() {
            return Err(invalid("non-negative-time", "latency and interval must be non-negative"));
        }

        match self.kind {
            ScenarioKind::Onboarding => self.validate_onboarding(1),
            ScenarioKind::Temploop => {
                self.validate_onboarding(2)?;
                self.validate_temploop()
            }
            ScenarioKind::Custom => self.validate_custom(),
        }
    }

    fn validate_task(&self, c: &ComponentConfig, t: &TaskSpec) -> Result<(), ConfigError> {
        for (metric, v) in t.configured_costs() {
            let Some(def) = self.metrics.iter().find(|m| &m.id == metric) else {
                return Err(invalid(
                    "metric-defined",
                    format!("task '{}' of component '{}' references undefined metric '{metric}'", t.id(), c.id),
                ));
            };
            if !def.domain.admits(*v) {
                return Err(invalid(
                    "cost-in-domain",
                    format!("cost {v} of task '{}' on component '{}' is outside {}", t.id(), c.id, def.domain),
                ));
            }
        }
        if t.is_security_related() && t.configured_costs().is_empty() {
            return Err(invalid(
                "security-task-has-cost",
                format!("security task '{}' of component '{}' has no configured cost", t.id(), c.id),
            ));
        }
        Ok(())
    }

    fn require_tasks(c: &ComponentConfig, phase: Phase, ids: &[&str]) -> Result<(), ConfigError> {
        for id in ids {
            if !c.has_task(phase, id) {
                let phase = match phase {
                    Phase::Onboarding => "onboarding",
                    Phase::Control => "control",
                };
                return Err(invalid(
                    "required-task",
                    format!("component '{}' needs {phase} task '{id}'", c.id),
                ));
            }
        }
        Ok(())
    }

    fn validate_onboarding(&self, min_devices: usize) -> Result<(), ConfigError> {
        let clouds = self.components.iter().filter(|c| c.role == Some(Role::Cloud)).count();
        if clouds != 1 {
            return Err(invalid("one-cloud", format!("exactly one component needs role = \"cloud\", found {clouds}")));
        }
        let devices = self.devices().count();
        if devices < min_devices {
            return Err(invalid(
                "device-count",
                format!("{} scenarios need at least {min_devices} device(s), found {devices}", self.kind),
            ));
        }
        for d in self.devices() {
            Self::require_tasks(d, Phase::Onboarding, &ONBOARDING_DEVICE_TASKS)?;
        }
        Self::require_tasks(self.cloud().expect("counted above"), Phase::Onboarding, &ONBOARDING_CLOUD_TASKS)
    }

    fn validate_temploop(&self) -> Result<(), ConfigError> {
        let p = &self.parameters;
        if p.reading.is_none() || p.limit.is_none() {
            return Err(invalid("reading-and-limit", "temploop scenarios need parameters.reading and parameters.limit"));
        }
        let sensor = self.sensor().ok_or_else(|| invalid("sensor-device", "no sensor device"))?;
        let actuator = self.actuator().ok_or_else(|| invalid("actuator-device", "no actuator device"))?;
        for (name, c) in [("sensor", sensor), ("actuator", actuator)] {
            if c.role != Some(Role::Device) {
                return Err(invalid("sensor-device", format!("{name} '{}' is not a device", c.id)));
            }
        }
        if sensor.id == actuator.id {
            return Err(invalid("distinct-devices", "sensor and actuator must be different devices"));
        }
        Self::require_tasks(sensor, Phase::Control, &SENSOR_TASKS)?;
        Self::require_tasks(actuator, Phase::Control, &ACTUATOR_TASKS)?;
        Self::require_tasks(self.cloud().expect("validated"), Phase::Control, &CLOUD_TRUST_TASKS)
    }

    fn validate_custom(&self) -> Result<(), ConfigError> {
        if self.interactions.is_empty() {
            return Err(invalid("custom-interactions", "custom scenarios need at least one [[interaction]]"));
        }
        let mut ids = BTreeSet::new();
        for i in &self.interactions {
            if !ids.insert(&i.id) {
                return Err(invalid("unique-interaction-id", format!("interaction '{}' is declared twice", i.id)));
            }
            if i.steps.is_empty() {
                return Err(invalid("custom-interactions", format!("interaction '{}' has no steps", i.id)));
            }
            for (c, t) in &i.steps {
                let comp = self.component(c).ok_or_else(|| {
                    invalid("step-resolves", format!("interaction '{}' names unknown component '{c}'", i.id))
                })?;
                if !comp.has_task(Phase::Control, t.as_str()) {
                    return Err(invalid(
                        "step-resolves",
                        format!("interaction '{}' names unknown task '{t}' of component '{c}'", i.id),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ConfigError::Parse { line, column, message: e.message().to_string() }
        })?;
        let config = raw.into_config()?;
        config.validate()?;
        Ok(config)
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: IoErrorKind(e.to_string()),
    })?;
    ScenarioConfig::from_toml_str(&text)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: ScenarioKind,
    clock_metric: Option<String>,
    #[serde(default, rename = "metric")]
    metrics: Vec<RawMetric>,
    #[serde(default, rename = "component")]
    components: Vec<RawComponent>,
    #[serde(default)]
    parameters: RawParameters,
    #[serde(default)]
    output: RawOutput,
    #[serde(default, rename = "interaction")]
    interactions: Vec<RawInteraction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetric {
    id: String,
    name: Option<String>,
    unit: String,
    #[serde(default = "default_domain")]
    domain: ValueDomain,
    #[serde(default)]
    mode: SamplingMode,
}

fn default_domain() -> ValueDomain {
    ValueDomain::NonNegativeRational
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComponent {
    id: String,
    label: Option<String>,
    role: Option<Role>,
    #[serde(default)]
    capabilities: Vec<String>,
    #[serde(default)]
    missing_credentials: Vec<Credential>,
    fail_at: Option<u8>,
    #[serde(default, rename = "task")]
    tasks: Vec<RawTask>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    id: String,
    label: Option<String>,
    kind: TaskKind,
    phase: Option<Phase>,
    #[serde(default)]
    costs: BTreeMap<String, Value>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawParameters {
    reading: Option<Value>,
    limit: Option<Value>,
    ordering: Option<LoopOrdering>,
    periods: Option<u32>,
    interval: Option<Value>,
    sensor: Option<String>,
    actuator: Option<String>,
    latency: Option<Value>,
    tamper_link: Option<bool>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    emit: Option<Emit>,
    group_by: Option<Vec<Level>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInteraction {
    id: String,
    steps: Vec<String>,
}

impl RawConfig {
    fn into_config(self) -> Result<ScenarioConfig, ConfigError> {
        let kind = self.scenario;
        let metrics: Vec<MetricDef> = self
            .metrics
            .into_iter()
            .map(|m| {
                let name = m.name.unwrap_or_else(|| m.id.clone());
                MetricDef::new(m.id, m.unit).with_name(name).with_domain(m.domain).with_mode(m.mode)
            })
            .collect();

        let clock_metric = match self.clock_metric {
            Some(id) => Some(MetricId::from(id)),
            None if metrics.len() == 1 => Some(metrics[0].id.clone()),
            None => None,
        };

        let default_phase = match kind {
            ScenarioKind::Onboarding => Phase::Onboarding,
            ScenarioKind::Temploop | ScenarioKind::Custom => Phase::Control,
        };

        let mut components = Vec::with_capacity(self.components.len());
        for rc in self.components {
            let id = ComponentId::from(rc.id);
            let capabilities = rc
                .capabilities
                .iter()
                .map(|s| s.parse::<Capability>().map_err(|e| invalid("known-capability", e)))
                .collect::<Result<BTreeSet<_>, _>>()?;
            let mut onboarding_tasks = Vec::new();
            let mut control_tasks = Vec::new();
            for rt in rc.tasks {
                let phase = rt.phase.unwrap_or(default_phase);
                if kind == ScenarioKind::Custom && phase == Phase::Onboarding {
                    return Err(invalid("custom-phase", "custom scenarios only use control-phase tasks"));
                }
                let label = rt.label.unwrap_or_else(|| rt.id.clone());
                let costs = rt.costs.into_iter().map(|(m, v)| (MetricId::from(m), v));
                let spec = TaskSpec::new(rt.id.clone(), label, rt.kind, costs).map_err(|e| {
                    let invariant = if rt.kind == TaskKind::Ordinary { "ordinary-task-no-cost" } else { "non-negative-cost" };
                    invalid(invariant, format!("component '{id}': {e}"))
                })?;
                match phase {
                    Phase::Onboarding => onboarding_tasks.push(spec),
                    Phase::Control => control_tasks.push(spec),
                }
            }
            components.push(ComponentConfig {
                label: rc.label.unwrap_or_else(|| id.to_string()),
                id,
                role: rc.role,
                capabilities,
                onboarding_tasks,
                control_tasks,
                missing_credentials: rc.missing_credentials.into_iter().collect(),
                fail_at: rc.fail_at,
            });
        }

        let p = self.parameters;
        let defaults = Parameters::default();
        let parameters = Parameters {
            reading: p.reading,
            limit: p.limit,
            ordering: p.ordering.unwrap_or(defaults.ordering),
            periods: p.periods.unwrap_or(defaults.periods),
            interval: p.interval.unwrap_or(defaults.interval),
            sensor: p.sensor.map(ComponentId::from),
            actuator: p.actuator.map(ComponentId::from),
            latency: p.latency.unwrap_or(defaults.latency),
            tamper_link: p.tamper_link.unwrap_or(false),
        };

        let interactions = self
            .interactions
            .into_iter()
            .map(|ri| {
                let steps = ri
                    .steps
                    .iter()
                    .map(|s| {
                        s.split_once(':')
                            .map(|(c, t)| (ComponentId::from(c.trim()), TaskId::from(t.trim())))
                            .ok_or_else(|| {
                                invalid("step-syntax", format!("step '{s}' of interaction '{}' is not component:task", ri.id))
                            })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(ScriptedInteraction { id: InteractionId::from(ri.id), steps })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;

        Ok(ScenarioConfig {
            kind,
            metrics,
            clock_metric,
            components,
            parameters,
            output: OutputOptions { emit: self.output.emit.unwrap_or_default(), group_by: self.output.group_by },
            interactions,
        })
    }
}
