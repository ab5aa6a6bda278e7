//! The two shipped use cases and scripted custom scenarios.
//!
//! A [`Cps`] session owns the scenario world (credentials, on-boarding
//! state, trust registry) and one [`PhaseLog`] per [`Phase`]. Each operation
//! builds a kernel over the session, runs it to quiescence and folds the
//! resulting ledger and traces back into the phase's log. On-boarding and
//! control tables declare different tasks under the same ids, which is why
//! each phase keeps its own ledger.

pub mod cipher;
pub mod onboarding;
pub mod temploop;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::config::{ConfigError, Phase, Role, ScenarioConfig, ScenarioKind};
use crate::ids::{ComponentId, InteractionId, TaskId};
use crate::ledger::{AggregationQuery, CostRecord, Ledger, LedgerError, Level, Rollup, Sum};
use crate::metrics::MetricRegistry;
use crate::simkernel::{Component, Ctx, Delivery, InteractionTrace, Kernel, SimError, TraceStatus};
use crate::value::Value;

use cipher::Key;
use onboarding::{Credentials, DeviceProfile, OnboardingPhase, OnboardingState, TrustRegistry};
use temploop::{LoopJob, LoopOrdering, TempLoopConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("device '{device}' rejected at step {step}: {reason}")]
    RejectedAtStep { device: ComponentId, step: u8, reason: String },
    #[error("requester '{0}' is not onboarded")]
    UntrustedRequester(ComponentId),
    #[error("'{requester}' does not trust '{subject}'")]
    TrustFailure { requester: ComponentId, subject: ComponentId },
    #[error("encryption failed: {0}")]
    EncryptFailure(String),
    #[error("decryption failed: {0}")]
    DecryptFailure(String),
    #[error("device '{0}' is already enrolled")]
    AlreadyEnrolled(ComponentId),
    #[error("'{0}' is not a device")]
    NotADevice(ComponentId),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl ScenarioError {
    /// Failures the modelled system produces by itself, as opposed to
    /// misuse or a broken scenario.
    pub fn is_outcome(&self) -> bool {
        matches!(
            self,
            ScenarioError::RejectedAtStep { .. }
                | ScenarioError::UntrustedRequester(_)
                | ScenarioError::TrustFailure { .. }
                | ScenarioError::EncryptFailure(_)
                | ScenarioError::DecryptFailure(_)
        )
    }
}

/// Which side of a control-loop trust check is asking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrustSlot {
    /// Sensor asks about the actuator before encrypting (tasks 3 and 4).
    Sender,
    /// Actuator asks about the sensor before decrypting (tasks 7 and 8).
    Receiver,
}

impl TrustSlot {
    pub fn requester_task(self) -> &'static str {
        match self {
            TrustSlot::Sender => "3",
            TrustSlot::Receiver => "7",
        }
    }

    pub fn cloud_task(self) -> &'static str {
        match self {
            TrustSlot::Sender => "4",
            TrustSlot::Receiver => "8",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Trusted,
    Untrusted,
    RequesterUntrusted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Msg {
    Enroll,
    OnboardingRequest,
    Accepted,
    DeviceRecord { device_key: Option<Key> },
    Authenticated,
    SystemRecord { sw_key: Option<Key>, local_cloud_sw_key: Option<Key> },
    SystemAuthorised,
    ServiceRecord,
    Enrolled,
    Rejected { step: u8, reason: String },
    CheckTrust,
    Sample,
    TrustQuery { subject: ComponentId, slot: TrustSlot },
    TrustVerdict { subject: ComponentId, slot: TrustSlot, verdict: Verdict },
    Ciphertext(Vec<u8>),
    Step(usize),
}

impl fmt::Display for Msg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Msg::Enroll => f.write_str("enroll"),
            Msg::OnboardingRequest => f.write_str("onboarding_request"),
            Msg::Accepted => f.write_str("accepted"),
            Msg::DeviceRecord { .. } => f.write_str("device_record"),
            Msg::Authenticated => f.write_str("authenticated"),
            Msg::SystemRecord { .. } => f.write_str("system_record"),
            Msg::SystemAuthorised => f.write_str("system_authorised"),
            Msg::ServiceRecord => f.write_str("service_record"),
            Msg::Enrolled => f.write_str("enrolled"),
            Msg::Rejected { step, .. } => write!(f, "rejected(step {step})"),
            Msg::CheckTrust => f.write_str("check_trust"),
            Msg::Sample => f.write_str("sample"),
            Msg::TrustQuery { subject, .. } => write!(f, "trust_query({subject})"),
            Msg::TrustVerdict { subject, verdict, .. } => write!(f, "trust_verdict({subject}, {verdict:?})"),
            Msg::Ciphertext(ct) => write!(f, "ciphertext({} bytes)", ct.len()),
            Msg::Step(n) => write!(f, "step({n})"),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Job {
    Onboarding { device: ComponentId },
    Trust { subject: ComponentId, slot: TrustSlot, verdict: Option<Verdict> },
    Loop(LoopJob),
    Script { steps: Vec<(ComponentId, TaskId)> },
}

/// Scenario state shared by all handlers of a kernel.
#[derive(Debug, Clone, Default)]
pub(crate) struct World {
    pub cloud: ComponentId,
    pub cloud_key: Key,
    pub devices: BTreeMap<ComponentId, DeviceProfile>,
    pub onboarding: BTreeMap<ComponentId, OnboardingState>,
    pub trust: TrustRegistry,
    pub jobs: BTreeMap<InteractionId, Job>,
    pub failures: BTreeMap<InteractionId, ScenarioError>,
    pub tamper_link: bool,
    pub nonce: u64,
}

impl World {
    pub fn next_nonce(&mut self) -> u64 {
        self.nonce += 1;
        self.nonce
    }
}

/// Ledger and traces of one phase of a session.
#[derive(Debug, Clone)]
pub struct PhaseLog {
    pub ledger: Ledger,
    pub traces: Vec<InteractionTrace>,
    pub end_time: Value,
}

impl PhaseLog {
    fn new(registry: Arc<MetricRegistry>) -> Self {
        PhaseLog { ledger: Ledger::new(registry), traces: Vec::new(), end_time: Value::ZERO }
    }

    pub fn trace(&self, interaction: &InteractionId) -> Option<&InteractionTrace> {
        self.traces.iter().find(|t| &t.interaction == interaction)
    }
}

#[derive(Debug, Clone)]
pub struct OnboardingReport {
    pub state: OnboardingState,
    pub trace: InteractionTrace,
    pub records: Vec<CostRecord>,
}

#[derive(Debug, Clone)]
pub struct LoopReport {
    pub trace: InteractionTrace,
    pub records: Vec<CostRecord>,
    pub actuated: bool,
}

/// A simulated system built from a validated configuration.
pub struct Cps {
    config: ScenarioConfig,
    registry: Arc<MetricRegistry>,
    seed: u64,
    world: World,
    logs: BTreeMap<Phase, PhaseLog>,
    trust_checks: usize,
    periods: usize,
}

enum Handlers {
    Onboarding,
    Control,
    Script,
}

impl Cps {
    pub fn new(config: ScenarioConfig, seed: u64) -> Result<Self, ScenarioError> {
        config.validate()?;
        let registry = config.registry();
        let mut world = World { tamper_link: config.parameters.tamper_link, ..World::default() };
        if let Some(cloud) = config.cloud() {
            world.cloud = cloud.id.clone();
            world.cloud_key = Key::new(format!("local-cloud-sw-key:{}", cloud.id));
        }
        for d in config.devices() {
            let credentials = Credentials::issued(&d.id, &world.cloud_key).without(d.missing_credentials.iter().copied());
            world.devices.insert(d.id.clone(), DeviceProfile { credentials, fail_at: d.fail_at });
        }
        let logs = [Phase::Onboarding, Phase::Control]
            .into_iter()
            .map(|p| (p, PhaseLog::new(registry.clone())))
            .collect();
        Ok(Cps { config, registry, seed, world, logs, trust_checks: 0, periods: 0 })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn trust_registry(&self) -> &TrustRegistry {
        &self.world.trust
    }

    pub fn onboarding_state(&self, device: &ComponentId) -> Option<&OnboardingState> {
        self.world.onboarding.get(device)
    }

    pub fn log(&self, phase: Phase) -> &PhaseLog {
        &self.logs[&phase]
    }

    /// Failures observed so far, keyed by interaction.
    pub fn failures(&self) -> &BTreeMap<InteractionId, ScenarioError> {
        &self.world.failures
    }

    pub fn into_logs(mut self) -> (PhaseLog, PhaseLog) {
        let onboarding = self.logs.remove(&Phase::Onboarding).expect("both phases exist");
        let control = self.logs.remove(&Phase::Control).expect("both phases exist");
        (onboarding, control)
    }

    fn kernel(&mut self, phase: Phase, handlers: Handlers) -> Result<Kernel<Msg, World>, ScenarioError> {
        let log = self.logs.get_mut(&phase).expect("both phases exist");
        let ledger = std::mem::replace(&mut log.ledger, Ledger::new(self.registry.clone()));
        let world = std::mem::take(&mut self.world);
        let mut k = Kernel::new(ledger, world, self.seed).starting_at(log.end_time);
        if let Some(m) = &self.config.clock_metric {
            k = k.with_clock_metric(m.clone());
        }
        for c in &self.config.components {
            let comp = match (&handlers, c.role) {
                (Handlers::Onboarding, Some(Role::Device)) => Component::new(c.id.clone(), onboarding::device),
                (Handlers::Onboarding, Some(Role::Cloud)) => Component::new(c.id.clone(), onboarding::cloud),
                (Handlers::Control, Some(Role::Device)) => Component::new(c.id.clone(), temploop::device),
                (Handlers::Control, Some(Role::Cloud)) => Component::new(c.id.clone(), temploop::cloud),
                (Handlers::Script, _) => Component::new(c.id.clone(), script),
                (_, None) => continue,
            };
            let comp = comp
                .with_label(c.label.clone())
                .with_capabilities(c.capabilities.iter().copied())
                .with_tasks(c.tasks(phase).iter().cloned());
            k.add_component(comp)?;
        }
        let latency = self.config.parameters.latency;
        if !latency.is_zero() {
            let ids: Vec<ComponentId> = self.config.components.iter().map(|c| c.id.clone()).collect();
            for a in &ids {
                for b in &ids {
                    if a != b && k.component_label(a).is_some() && k.component_label(b).is_some() {
                        k.set_link_latency(a, b, latency)?;
                    }
                }
            }
        }
        Ok(k)
    }

    /// Runs `k` and folds its output back into the session, even when the
    /// run itself failed.
    fn settle(&mut self, phase: Phase, mut k: Kernel<Msg, World>) -> Result<(), ScenarioError> {
        let result = k.run();
        let (out, world) = k.finish();
        self.world = world;
        let log = self.logs.get_mut(&phase).expect("both phases exist");
        log.ledger = out.ledger;
        log.traces.extend(out.traces);
        log.end_time = out.end_time;
        result.map_err(ScenarioError::from)
    }

    fn outcome(&self, phase: Phase, interaction: &InteractionId) -> Result<InteractionTrace, ScenarioError> {
        if let Some(err) = self.world.failures.get(interaction) {
            return Err(err.clone());
        }
        self.logs[&phase]
            .trace(interaction)
            .cloned()
            .ok_or_else(|| ScenarioError::Sim(SimError::UnknownInteraction(interaction.clone())))
    }

    fn require_device(&self, id: &ComponentId) -> Result<(), ScenarioError> {
        if self.world.devices.contains_key(id) {
            Ok(())
        } else {
            Err(ScenarioError::NotADevice(id.clone()))
        }
    }

    /// On-boards `device` into the cloud as interaction `onboard-<device>`.
    ///
    /// A rejection returns [`ScenarioError::RejectedAtStep`]; the records of
    /// the tasks that ran stay in the on-boarding ledger.
    pub fn onboard(&mut self, device: &ComponentId) -> Result<OnboardingReport, ScenarioError> {
        self.require_device(device)?;
        if self.world.onboarding.get(device).is_some_and(|s| s.phase != OnboardingPhase::Unenrolled) {
            return Err(ScenarioError::AlreadyEnrolled(device.clone()));
        }
        let i = InteractionId::from(format!("onboard-{device}"));
        let cloud = self.world.cloud.clone();
        let mandatory = onboarding::DEVICE_TASKS
            .iter()
            .map(|t| (device.clone(), TaskId::from(*t)))
            .chain(onboarding::CLOUD_TASKS.iter().map(|t| (cloud.clone(), TaskId::from(*t))));
        let flags = self.world.devices[device].credentials.flags();
        self.world.onboarding.insert(device.clone(), OnboardingState::new(device.clone(), flags));
        self.world.jobs.insert(i.clone(), Job::Onboarding { device: device.clone() });

        let start = self.logs[&Phase::Onboarding].ledger.len();
        let mut k = self.kernel(Phase::Onboarding, Handlers::Onboarding)?;
        k.open_interaction(i.clone(), mandatory)?;
        let now = k.now();
        k.inject(now, device, &i, Msg::Enroll)?;
        self.settle(Phase::Onboarding, k)?;

        let trace = self.outcome(Phase::Onboarding, &i)?;
        Ok(OnboardingReport {
            state: self.world.onboarding[device].clone(),
            trace,
            records: self.logs[&Phase::Onboarding].ledger.since(start).to_vec(),
        })
    }

    /// On-boards every declared device in declaration order. Rejections are
    /// collected, not raised.
    pub fn onboard_all(&mut self) -> Result<BTreeMap<ComponentId, Result<OnboardingReport, ScenarioError>>, ScenarioError> {
        let devices: Vec<ComponentId> = self.config.devices().map(|d| d.id.clone()).collect();
        let mut out = BTreeMap::new();
        for d in devices {
            match self.onboard(&d) {
                Err(e) if !e.is_outcome() => return Err(e),
                r => {
                    out.insert(d, r);
                }
            }
        }
        Ok(out)
    }

    /// Asks the cloud, on behalf of `requester`, whether `subject` is part
    /// of the cloud. The requester runs task 3 when it owns one, else task 7;
    /// the cloud runs the matching task 4 or 8.
    pub fn check_trustworthiness(&mut self, requester: &ComponentId, subject: &ComponentId) -> Result<bool, ScenarioError> {
        self.require_device(requester)?;
        if !self.world.trust.contains(requester) {
            return Err(ScenarioError::UntrustedRequester(requester.clone()));
        }
        let comp = self.config.component(requester).expect("devices come from the config");
        let has = |t: &str| comp.control_tasks.iter().any(|s| s.id().as_str() == t);
        let slot = if has("3") {
            TrustSlot::Sender
        } else if has("7") {
            TrustSlot::Receiver
        } else {
            return Err(ScenarioError::Invalid(format!("'{requester}' has no control task 3 or 7")));
        };

        self.trust_checks += 1;
        let i = InteractionId::from(format!("trust-{}", self.trust_checks));
        let mandatory = [
            (requester.clone(), TaskId::from(slot.requester_task())),
            (self.world.cloud.clone(), TaskId::from(slot.cloud_task())),
        ];
        self.world.jobs.insert(i.clone(), Job::Trust { subject: subject.clone(), slot, verdict: None });

        let mut k = self.kernel(Phase::Control, Handlers::Control)?;
        k.open_interaction(i.clone(), mandatory)?;
        let now = k.now();
        k.inject(now, requester, &i, Msg::CheckTrust)?;
        self.settle(Phase::Control, k)?;
        self.outcome(Phase::Control, &i)?;
        match self.world.jobs.get(&i) {
            Some(Job::Trust { verdict: Some(v), .. }) => Ok(*v == Verdict::Trusted),
            _ => Err(ScenarioError::Invalid(format!("trust check '{i}' produced no verdict"))),
        }
    }

    /// Runs one control period as interaction `temploop-<n>`, starting no
    /// earlier than `at`.
    pub fn run_temploop(&mut self, loop_config: TempLoopConfig, at: Value) -> Result<LoopReport, ScenarioError> {
        let sensor = self.config.sensor().ok_or_else(|| ScenarioError::Invalid("no sensor device".into()))?.id.clone();
        let actuator =
            self.config.actuator().ok_or_else(|| ScenarioError::Invalid("no actuator device".into()))?.id.clone();
        let cloud = self.world.cloud.clone();

        self.periods += 1;
        let i = InteractionId::from(format!("temploop-{}", self.periods));
        let roles = [&sensor, &actuator, &cloud];
        let mandatory: Vec<(ComponentId, TaskId)> = loop_config
            .mandatory()
            .into_iter()
            .map(|(r, t)| (roles[r].clone(), TaskId::from(t)))
            .collect();
        self.world.jobs.insert(
            i.clone(),
            Job::Loop(LoopJob { config: loop_config, sensor: sensor.clone(), actuator, ciphertext: None, actuated: false }),
        );

        let start = self.logs[&Phase::Control].ledger.len();
        let mut k = self.kernel(Phase::Control, Handlers::Control)?;
        k.open_interaction(i.clone(), mandatory)?;
        k.inject(at, &sensor, &i, Msg::Sample)?;
        self.settle(Phase::Control, k)?;

        let trace = self.outcome(Phase::Control, &i)?;
        let actuated = matches!(self.world.jobs.get(&i), Some(Job::Loop(j)) if j.actuated);
        Ok(LoopReport { trace, records: self.logs[&Phase::Control].ledger.since(start).to_vec(), actuated })
    }

    /// Runs every scripted interaction of a custom scenario, one after the
    /// other.
    pub fn run_scripts(&mut self) -> Result<(), ScenarioError> {
        let scripts = self.config.interactions.clone();
        for s in scripts {
            self.world.jobs.insert(s.id.clone(), Job::Script { steps: s.steps.clone() });
            let mut k = self.kernel(Phase::Control, Handlers::Script)?;
            k.open_interaction(s.id.clone(), s.steps.iter().cloned())?;
            let now = k.now();
            k.inject(now, &s.steps[0].0, &s.id, Msg::Step(0))?;
            self.settle(Phase::Control, k)?;
        }
        Ok(())
    }
}

/// Handler for scripted interactions: run step `n`, pass control on.
fn script(ctx: &mut Ctx<'_, Msg, World>, d: Delivery<Msg>) -> Result<(), SimError> {
    let i = d.interaction;
    let Msg::Step(n) = d.message else {
        return Err(SimError::Handler(format!("scripted component cannot handle {}", d.message)));
    };
    let steps = match ctx.world().jobs.get(&i) {
        Some(Job::Script { steps }) => steps.clone(),
        _ => return Err(SimError::Handler(format!("interaction '{i}' is not scripted"))),
    };
    ctx.execute_task(&steps[n].1, &i)?;
    match steps.get(n + 1) {
        Some((next, _)) => {
            ctx.send(next, &i, Msg::Step(n + 1))?;
            Ok(())
        }
        None => ctx.complete(&i),
    }
}

/// Everything one `run` produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// On-boarding that precedes a control scenario.
    pub setup: Option<PhaseLog>,
    /// The log the scenario is evaluated on.
    pub main: PhaseLog,
    pub failures: BTreeMap<InteractionId, ScenarioError>,
}

impl RunOutput {
    pub fn records(&self) -> &[CostRecord] {
        self.main.ledger.records()
    }

    pub fn traces(&self) -> &[InteractionTrace] {
        &self.main.traces
    }

    pub fn completed(&self) -> usize {
        self.main.traces.iter().filter(|t| t.status == TraceStatus::Completed).count()
    }
}

/// Simulates `config`. The seed is echoed in the output; every shipped
/// scenario is deterministic.
pub fn run(config: &ScenarioConfig, seed: u64) -> Result<RunOutput, ScenarioError> {
    let mut cps = Cps::new(config.clone(), seed)?;
    let main_phase = match config.kind {
        ScenarioKind::Onboarding => {
            cps.onboard_all()?;
            Phase::Onboarding
        }
        ScenarioKind::Temploop => {
            cps.onboard_all()?;
            let p = &config.parameters;
            let lc = TempLoopConfig {
                reading: p.reading.expect("validated"),
                limit: p.limit.expect("validated"),
                ordering: p.ordering,
            };
            let base = cps.log(Phase::Control).end_time;
            for n in 0..p.periods {
                let at = base + p.interval * Value::from(n);
                match cps.run_temploop(lc, at) {
                    Err(e) if !e.is_outcome() => return Err(e),
                    _ => {}
                }
            }
            Phase::Control
        }
        ScenarioKind::Custom => {
            cps.run_scripts()?;
            Phase::Control
        }
    };
    let failures = cps.failures().clone();
    let (onboarding, control) = cps.into_logs();
    let (setup, main) = match main_phase {
        Phase::Onboarding => (None, onboarding),
        Phase::Control if config.kind == ScenarioKind::Temploop => (Some(onboarding), control),
        Phase::Control => (None, control),
    };
    Ok(RunOutput { kind: config.kind, seed, setup, main, failures })
}

/// Outcome of running a control scenario under both orderings.
#[derive(Debug, Clone)]
pub struct SavingsReport {
    pub baseline_total: Sum,
    pub variant_total: Sum,
    /// `baseline_total - variant_total`.
    pub delta: Sum,
    pub baseline_rollup: Rollup,
    pub variant_rollup: Rollup,
    pub baseline: RunOutput,
    pub variant: RunOutput,
}

/// Runs `config` once with the baseline ordering and once with the limit
/// check first, and compares the security cost of the two.
pub fn compare_orderings(config: &ScenarioConfig, seed: u64, levels: &[Level]) -> Result<SavingsReport, ScenarioError> {
    if config.kind != ScenarioKind::Temploop {
        return Err(ScenarioError::Invalid(format!("compare needs a temploop scenario, got {}", config.kind)));
    }
    let with = |ordering| {
        let mut c = config.clone();
        c.parameters.ordering = ordering;
        run(&c, seed)
    };
    let baseline = with(LoopOrdering::Baseline)?;
    let variant = with(LoopOrdering::LimitFirst)?;

    let hint = config.clock_metric.as_ref().and_then(|m| config.unit_of(m)).cloned();
    let total = |out: &RunOutput| -> Result<Sum, ScenarioError> {
        let agg = crate::ledger::total_cost(out.records(), &AggregationQuery::total(), hint.as_ref())?;
        match agg.grand_total {
            Some(s) => Ok(s),
            None => {
                let units = agg.groups.iter().map(|g| g.total.unit.clone()).collect();
                Err(LedgerError::IncompatibleUnits(units).into())
            }
        }
    };
    let baseline_total = total(&baseline)?;
    let variant_total = total(&variant)?;
    if baseline_total.unit != variant_total.unit {
        return Err(LedgerError::IncompatibleUnits([baseline_total.unit, variant_total.unit].into()).into());
    }
    let delta = Sum { value: baseline_total.value - variant_total.value, unit: baseline_total.unit.clone() };
    Ok(SavingsReport {
        baseline_rollup: baseline.main.ledger.rollup(levels)?,
        variant_rollup: variant.main.ledger.rollup(levels)?,
        baseline_total,
        variant_total,
        delta,
        baseline,
        variant,
    })
}
