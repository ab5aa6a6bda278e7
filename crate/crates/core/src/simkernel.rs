//! Deterministic discrete-event kernel.
//!
//! Components exchange messages through a single time-ordered queue. Ties
//! at equal timestamps are broken by insertion sequence number, so a run is
//! a pure function of its inputs. Executing a task advances the simulated
//! clock by the task's configured cost under the clock metric; the kernel
//! models one sequential processor, so an event whose timestamp has already
//! passed is handled at the current clock reading instead.
//!
//! Every security-related task execution appends one [`CostRecord`] per
//! configured metric to the kernel's [`Ledger`]. Ordinary tasks append none.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use thiserror::Error;

use crate::ids::{ComponentId, InteractionId, MetricId, TaskId};
use crate::ledger::{CostRecord, Ledger, LedgerError, TaskSpec};
use crate::metrics::{timer_sample, Clock, SimClock};
use crate::value::Value;

pub const DEFAULT_EVENT_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("component '{component}' has no task '{task}'")]
    UnknownTask { component: ComponentId, task: TaskId },
    #[error("unknown component '{0}'")]
    UnknownComponent(ComponentId),
    #[error("component '{0}' is registered twice")]
    DuplicateComponent(ComponentId),
    #[error("unknown interaction '{0}'")]
    UnknownInteraction(InteractionId),
    #[error("interaction '{0}' is opened twice")]
    DuplicateInteraction(InteractionId),
    #[error("interaction '{0}' already reached a terminal status")]
    InteractionClosed(InteractionId),
    #[error("interaction '{interaction}' cannot complete, mandatory tasks missing: {}", .missing.join(", "))]
    IncompleteInteraction { interaction: InteractionId, missing: Vec<String> },
    #[error("event queue drained while interactions were still open: {}", fmt_ids(.0))]
    DeadlockDetected(Vec<InteractionId>),
    #[error("event limit of {0} exceeded")]
    EventLimit(u64),
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("handler failure: {0}")]
    Handler(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

fn fmt_ids(ids: &[InteractionId]) -> String {
    ids.iter().map(InteractionId::as_str).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Capability {
    Sensing,
    Actuation,
    Computation,
    Communication,
}

impl std::str::FromStr for Capability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sensing" => Ok(Capability::Sensing),
            "actuation" => Ok(Capability::Actuation),
            "computation" => Ok(Capability::Computation),
            "communication" => Ok(Capability::Communication),
            other => Err(format!("unknown capability '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    MessageDelivery,
    TaskStart,
    TaskEnd,
    SensorReading,
    ActuatorCommand,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::MessageDelivery => "message_delivery",
            EventKind::TaskStart => "task_start",
            EventKind::TaskEnd => "task_end",
            EventKind::SensorReading => "sensor_reading",
            EventKind::ActuatorCommand => "actuator_command",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub time: Value,
    pub component: ComponentId,
    pub task: Option<TaskId>,
    pub kind: EventKind,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceStatus {
    Completed,
    Aborted(String),
}

impl fmt::Display for TraceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceStatus::Completed => f.write_str("completed"),
            TraceStatus::Aborted(reason) => write!(f, "aborted({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionTrace {
    pub interaction: InteractionId,
    pub entries: Vec<TraceEntry>,
    pub status: TraceStatus,
}

impl InteractionTrace {
    pub fn is_completed(&self) -> bool {
        self.status == TraceStatus::Completed
    }

    /// Task ids of `task_end` entries, in execution order.
    pub fn executed_tasks(&self) -> impl Iterator<Item = (&ComponentId, &TaskId)> {
        self.entries
            .iter()
            .filter(|e| e.kind == EventKind::TaskEnd)
            .filter_map(|e| e.task.as_ref().map(|t| (&e.component, t)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskOutcome {
    Succeeded,
    Failed(String),
}

/// A message as seen by its recipient. `from` is `None` for stimuli
/// injected from outside the system (sensor triggers, operator commands).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery<M> {
    pub from: Option<ComponentId>,
    pub to: ComponentId,
    pub interaction: InteractionId,
    pub message: M,
}

/// State-machine transition for one component. Handler state lives in the
/// handler itself or in the shared world `W`.
pub trait Handler<M, W> {
    fn handle(&mut self, ctx: &mut Ctx<'_, M, W>, delivery: Delivery<M>) -> Result<(), SimError>;
}

impl<M, W, F> Handler<M, W> for F
where
    F: FnMut(&mut Ctx<'_, M, W>, Delivery<M>) -> Result<(), SimError>,
{
    fn handle(&mut self, ctx: &mut Ctx<'_, M, W>, delivery: Delivery<M>) -> Result<(), SimError> {
        self(ctx, delivery)
    }
}

pub struct Component<M, W> {
    pub id: ComponentId,
    pub label: String,
    pub capabilities: BTreeSet<Capability>,
    pub tasks: BTreeMap<TaskId, TaskSpec>,
    pub handler: Box<dyn Handler<M, W>>,
}

impl<M, W> Component<M, W> {
    pub fn new(id: impl Into<ComponentId>, handler: impl Handler<M, W> + 'static) -> Self {
        let id = id.into();
        Component {
            label: id.to_string(),
            id,
            capabilities: BTreeSet::new(),
            tasks: BTreeMap::new(),
            handler: Box::new(handler),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_capabilities(mut self, caps: impl IntoIterator<Item = Capability>) -> Self {
        self.capabilities.extend(caps);
        self
    }

    pub fn with_task(mut self, spec: TaskSpec) -> Self {
        self.tasks.insert(spec.id().clone(), spec);
        self
    }

    pub fn with_tasks(mut self, specs: impl IntoIterator<Item = TaskSpec>) -> Self {
        for spec in specs {
            self.tasks.insert(spec.id().clone(), spec);
        }
        self
    }
}

struct ComponentInfo {
    label: String,
    tasks: BTreeMap<TaskId, TaskSpec>,
}

struct Pending<M> {
    time: Value,
    seq: u64,
    delivery: Delivery<M>,
}

impl<M> PartialEq for Pending<M> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl<M> Eq for Pending<M> {}
impl<M> PartialOrd for Pending<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Pending<M> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

struct OpenInteraction {
    entries: Vec<TraceEntry>,
    mandatory: Vec<(ComponentId, TaskId)>,
    status: Option<TraceStatus>,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub seed: u64,
    pub end_time: Value,
    pub traces: Vec<InteractionTrace>,
    pub ledger: Ledger,
}

pub struct Kernel<M, W> {
    clock: SimClock,
    clock_metric: Option<MetricId>,
    seq: u64,
    queue: BinaryHeap<Reverse<Pending<M>>>,
    components: BTreeMap<ComponentId, ComponentInfo>,
    handlers: BTreeMap<ComponentId, Box<dyn Handler<M, W>>>,
    latency: BTreeMap<(ComponentId, ComponentId), Value>,
    link_tail: BTreeMap<(ComponentId, ComponentId), Value>,
    interactions: BTreeMap<InteractionId, OpenInteraction>,
    opened: Vec<InteractionId>,
    ledger: Ledger,
    world: W,
    seed: u64,
    processed: u64,
    event_limit: u64,
}

impl<M: fmt::Display, W> Kernel<M, W> {
    pub fn new(ledger: Ledger, world: W, seed: u64) -> Self {
        Kernel {
            clock: SimClock::new(),
            clock_metric: None,
            seq: 0,
            queue: BinaryHeap::new(),
            components: BTreeMap::new(),
            handlers: BTreeMap::new(),
            latency: BTreeMap::new(),
            link_tail: BTreeMap::new(),
            interactions: BTreeMap::new(),
            opened: Vec::new(),
            ledger,
            world,
            seed,
            processed: 0,
            event_limit: DEFAULT_EVENT_LIMIT,
        }
    }

    /// Task costs under `metric` advance the simulated clock.
    pub fn with_clock_metric(mut self, metric: impl Into<MetricId>) -> Self {
        self.clock_metric = Some(metric.into());
        self
    }

    pub fn starting_at(mut self, t: Value) -> Self {
        self.clock = SimClock::starting_at(t);
        self
    }

    pub fn with_event_limit(mut self, limit: u64) -> Self {
        self.event_limit = limit;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now(&self) -> Value {
        self.clock.now()
    }

    pub fn world(&self) -> &W {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut W {
        &mut self.world
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn add_component(&mut self, component: Component<M, W>) -> Result<(), SimError> {
        let Component { id, label, capabilities: _, tasks, handler } = component;
        if self.components.contains_key(&id) {
            return Err(SimError::DuplicateComponent(id));
        }
        for spec in tasks.values() {
            self.ledger.declare_task(&id, spec)?;
        }
        self.components.insert(id.clone(), ComponentInfo { label, tasks });
        self.handlers.insert(id, handler);
        Ok(())
    }

    pub fn component_label(&self, id: &ComponentId) -> Option<&str> {
        self.components.get(id).map(|c| c.label.as_str())
    }

    /// Sets the one-way latency of the `from -> to` link. Links default to 0.
    pub fn set_link_latency(&mut self, from: &ComponentId, to: &ComponentId, latency: Value) -> Result<(), SimError> {
        self.require_component(from)?;
        self.require_component(to)?;
        if latency.is_negative() {
            return Err(SimError::ScenarioInvalid(format!("negative latency on {from} -> {to}")));
        }
        self.latency.insert((from.clone(), to.clone()), latency);
        Ok(())
    }

    /// Opens an interaction. It may complete only once every `(component,
    /// task)` pair in `mandatory` has a `task_end` entry.
    pub fn open_interaction(
        &mut self,
        id: impl Into<InteractionId>,
        mandatory: impl IntoIterator<Item = (ComponentId, TaskId)>,
    ) -> Result<(), SimError> {
        let id = id.into();
        if self.interactions.contains_key(&id) {
            return Err(SimError::DuplicateInteraction(id));
        }
        self.interactions.insert(
            id.clone(),
            OpenInteraction { entries: Vec::new(), mandatory: mandatory.into_iter().collect(), status: None },
        );
        self.opened.push(id);
        Ok(())
    }

    /// Schedules an external stimulus for `to` at time `at` (clamped to now).
    pub fn inject(
        &mut self,
        at: Value,
        to: &ComponentId,
        interaction: &InteractionId,
        message: M,
    ) -> Result<(), SimError> {
        self.require_component(to)?;
        self.require_interaction(interaction)?;
        let time = if at < self.now() { self.now() } else { at };
        self.push(time, Delivery { from: None, to: to.clone(), interaction: interaction.clone(), message });
        Ok(())
    }

    /// Schedules delivery of `message` on the `from -> to` link. Deliveries
    /// on one link are FIFO.
    pub fn send(
        &mut self,
        from: &ComponentId,
        to: &ComponentId,
        interaction: &InteractionId,
        message: M,
    ) -> Result<Value, SimError> {
        self.require_component(from)?;
        self.require_component(to)?;
        self.require_interaction(interaction)?;
        let link = (from.clone(), to.clone());
        let latency = self.latency.get(&link).copied().unwrap_or(Value::ZERO);
        let mut at = self.now() + latency;
        if let Some(tail) = self.link_tail.get(&link) {
            if *tail > at {
                at = *tail;
            }
        }
        self.link_tail.insert(link, at);
        self.push(
            at,
            Delivery { from: Some(from.clone()), to: to.clone(), interaction: interaction.clone(), message },
        );
        Ok(at)
    }

    fn push(&mut self, time: Value, delivery: Delivery<M>) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Pending { time, seq, delivery }));
    }

    /// Executes `task` on `component` as part of `interaction`.
    pub fn execute_task(
        &mut self,
        component: &ComponentId,
        task: &TaskId,
        interaction: &InteractionId,
    ) -> Result<TaskOutcome, SimError> {
        let res = self.execute_task_with(component, task, interaction, |_| Ok(()))?;
        Ok(match res {
            Ok(()) => TaskOutcome::Succeeded,
            Err(reason) => TaskOutcome::Failed(reason),
        })
    }

    /// Executes `task`, running `work` while the clock advances by the
    /// task's configured cost. A failed `work` still incurs the full cost.
    pub fn execute_task_with<T>(
        &mut self,
        component: &ComponentId,
        task: &TaskId,
        interaction: &InteractionId,
        work: impl FnOnce(&mut W) -> Result<T, String>,
    ) -> Result<Result<T, String>, SimError> {
        let spec = self
            .components
            .get(component)
            .ok_or_else(|| SimError::UnknownComponent(component.clone()))?
            .tasks
            .get(task)
            .cloned()
            .ok_or_else(|| SimError::UnknownTask { component: component.clone(), task: task.clone() })?;
        self.require_open(interaction)?;

        let start = self.now();
        self.trace(interaction, start, component, Some(task), EventKind::TaskStart, spec.label().to_string())?;

        let advance = self
            .clock_metric
            .as_ref()
            .and_then(|m| spec.cost(m))
            .unwrap_or(Value::ZERO);
        let world = &mut self.world;
        let (result, elapsed) = timer_sample(&mut self.clock, |clock| {
            clock.advance(advance);
            work(world)
        });

        let outcome = match &result {
            Ok(_) => "ok".to_string(),
            Err(reason) => format!("failed: {reason}"),
        };
        let end = self.now();
        self.trace(interaction, end, component, Some(task), EventKind::TaskEnd, outcome)?;

        if spec.is_security_related() {
            for (metric, configured) in spec.configured_costs() {
                let value = if self.clock_metric.as_ref() == Some(metric) { elapsed } else { *configured };
                let unit = self
                    .ledger
                    .registry()
                    .get(metric)
                    .ok_or_else(|| LedgerError::UnknownMetric(metric.clone()))?
                    .unit
                    .clone();
                let record = CostRecord::new(
                    interaction.clone(),
                    component.clone(),
                    task.clone(),
                    metric.clone(),
                    value,
                    unit,
                )?;
                self.ledger.record(record)?;
            }
        }
        Ok(result)
    }

    pub fn record_sensor_reading(
        &mut self,
        component: &ComponentId,
        interaction: &InteractionId,
        reading: impl Into<String>,
    ) -> Result<(), SimError> {
        self.require_component(component)?;
        let now = self.now();
        self.trace(interaction, now, component, None, EventKind::SensorReading, reading.into())
    }

    pub fn record_actuator_command(
        &mut self,
        component: &ComponentId,
        interaction: &InteractionId,
        command: impl Into<String>,
    ) -> Result<(), SimError> {
        self.require_component(component)?;
        let now = self.now();
        self.trace(interaction, now, component, None, EventKind::ActuatorCommand, command.into())
    }

    pub fn complete(&mut self, interaction: &InteractionId) -> Result<(), SimError> {
        self.require_open(interaction)?;
        let open = self.interactions.get_mut(interaction).expect("checked above");
        let done: BTreeSet<(&ComponentId, &TaskId)> = open
            .entries
            .iter()
            .filter(|e| e.kind == EventKind::TaskEnd)
            .filter_map(|e| e.task.as_ref().map(|t| (&e.component, t)))
            .collect();
        let missing: Vec<String> = open
            .mandatory
            .iter()
            .filter(|(c, t)| !done.contains(&(c, t)))
            .map(|(c, t)| format!("{c}:{t}"))
            .collect();
        if !missing.is_empty() {
            return Err(SimError::IncompleteInteraction { interaction: interaction.clone(), missing });
        }
        open.status = Some(TraceStatus::Completed);
        Ok(())
    }

    pub fn abort(&mut self, interaction: &InteractionId, reason: impl Into<String>) -> Result<(), SimError> {
        self.require_open(interaction)?;
        self.interactions.get_mut(interaction).expect("checked above").status = Some(TraceStatus::Aborted(reason.into()));
        Ok(())
    }

    pub fn status(&self, interaction: &InteractionId) -> Option<&TraceStatus> {
        self.interactions.get(interaction).and_then(|o| o.status.as_ref())
    }

    /// Processes events until the queue drains. Any interaction still open
    /// at that point is reported as a deadlock.
    pub fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse(pending)) = self.queue.pop() {
            self.processed += 1;
            if self.processed > self.event_limit {
                return Err(SimError::EventLimit(self.event_limit));
            }
            self.clock.advance_to(pending.time);
            let delivery = pending.delivery;
            let now = self.now();
            let from = delivery.from.as_ref().map_or("env", ComponentId::as_str);
            let outcome = format!("{from} -> {}: {}", delivery.to, delivery.message);
            self.trace(&delivery.interaction, now, &delivery.to, None, EventKind::MessageDelivery, outcome)?;

            let me = delivery.to.clone();
            let mut handler = self.handlers.remove(&me).ok_or_else(|| SimError::UnknownComponent(me.clone()))?;
            let result = handler.handle(&mut Ctx { kernel: self, me: me.clone() }, delivery);
            self.handlers.insert(me, handler);
            result?;
        }
        let open: Vec<InteractionId> = self
            .opened
            .iter()
            .filter(|id| self.interactions[*id].status.is_none())
            .cloned()
            .collect();
        if !open.is_empty() {
            return Err(SimError::DeadlockDetected(open));
        }
        Ok(())
    }

    /// Consumes the kernel. Interactions that never reached a terminal
    /// status are reported as aborted.
    pub fn finish(mut self) -> (SimOutput, W) {
        let traces = self
            .opened
            .iter()
            .map(|id| {
                let open = self.interactions.remove(id).expect("opened interactions are tracked");
                InteractionTrace {
                    interaction: id.clone(),
                    entries: open.entries,
                    status: open.status.unwrap_or_else(|| TraceStatus::Aborted("unfinished".into())),
                }
            })
            .collect();
        let out = SimOutput { seed: self.seed, end_time: self.clock.now(), traces, ledger: self.ledger };
        (out, self.world)
    }

    fn trace(
        &mut self,
        interaction: &InteractionId,
        time: Value,
        component: &ComponentId,
        task: Option<&TaskId>,
        kind: EventKind,
        outcome: String,
    ) -> Result<(), SimError> {
        let open = self
            .interactions
            .get_mut(interaction)
            .ok_or_else(|| SimError::UnknownInteraction(interaction.clone()))?;
        open.entries.push(TraceEntry { time, component: component.clone(), task: task.cloned(), kind, outcome });
        Ok(())
    }

    fn require_component(&self, id: &ComponentId) -> Result<(), SimError> {
        if self.components.contains_key(id) {
            Ok(())
        } else {
            Err(SimError::UnknownComponent(id.clone()))
        }
    }

    fn require_interaction(&self, id: &InteractionId) -> Result<(), SimError> {
        if self.interactions.contains_key(id) {
            Ok(())
        } else {
            Err(SimError::UnknownInteraction(id.clone()))
        }
    }

    fn require_open(&self, id: &InteractionId) -> Result<(), SimError> {
        match self.interactions.get(id) {
            None => Err(SimError::UnknownInteraction(id.clone())),
            Some(o) if o.status.is_some() => Err(SimError::InteractionClosed(id.clone())),
            Some(_) => Ok(()),
        }
    }
}

/// What a handler can do while it processes one delivery.
pub struct Ctx<'a, M, W> {
    kernel: &'a mut Kernel<M, W>,
    me: ComponentId,
}

impl<M: fmt::Display, W> Ctx<'_, M, W> {
    pub fn me(&self) -> &ComponentId {
        &self.me
    }

    pub fn now(&self) -> Value {
        self.kernel.now()
    }

    pub fn world(&self) -> &W {
        &self.kernel.world
    }

    pub fn world_mut(&mut self) -> &mut W {
        &mut self.kernel.world
    }

    pub fn execute_task(&mut self, task: &TaskId, interaction: &InteractionId) -> Result<TaskOutcome, SimError> {
        let me = self.me.clone();
        self.kernel.execute_task(&me, task, interaction)
    }

    pub fn execute_task_with<T>(
        &mut self,
        task: &TaskId,
        interaction: &InteractionId,
        work: impl FnOnce(&mut W) -> Result<T, String>,
    ) -> Result<Result<T, String>, SimError> {
        let me = self.me.clone();
        self.kernel.execute_task_with(&me, task, interaction, work)
    }

    pub fn send(&mut self, to: &ComponentId, interaction: &InteractionId, message: M) -> Result<Value, SimError> {
        let me = self.me.clone();
        self.kernel.send(&me, to, interaction, message)
    }

    pub fn sense(&mut self, interaction: &InteractionId, reading: impl Into<String>) -> Result<(), SimError> {
        let me = self.me.clone();
        self.kernel.record_sensor_reading(&me, interaction, reading)
    }

    pub fn actuate(&mut self, interaction: &InteractionId, command: impl Into<String>) -> Result<(), SimError> {
        let me = self.me.clone();
        self.kernel.record_actuator_command(&me, interaction, command)
    }

    pub fn complete(&mut self, interaction: &InteractionId) -> Result<(), SimError> {
        self.kernel.complete(interaction)
    }

    pub fn abort(&mut self, interaction: &InteractionId, reason: impl Into<String>) -> Result<(), SimError> {
        self.kernel.abort(interaction, reason)
    }
}
