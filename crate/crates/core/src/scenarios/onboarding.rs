//! Device on-boarding into the local cloud.
//!
//! Each device runs one interaction with the cloud. Tasks 1 (connect) and 2
//! (accept request) are ordinary; tasks 3..=8 are the security-related
//! chain-of-trust steps:
//!
//! | step | performed by | action |
//! |------|--------------|--------|
//! | 3 | device | publish device record with device key |
//! | 4 | cloud  | authenticate |
//! | 5 | device | publish system record with SW key and local-cloud SW key |
//! | 6 | cloud  | authorise system |
//! | 7 | device | publish service record |
//! | 8 | cloud  | authorise service |
//!
//! A device enters the [`TrustRegistry`] only after step 8 succeeds. A
//! failure at any step rejects the device and ends its interaction; the
//! costs of tasks that did run stay in the ledger.

use std::collections::BTreeSet;
use std::fmt;

use serde::Deserialize;

use super::cipher::Key;
use super::{Job, Msg, ScenarioError, World};
use crate::ids::{ComponentId, InteractionId, TaskId};
use crate::simkernel::{Ctx, Delivery, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Credential {
    DeviceKey,
    SwKey,
    LocalCloudSwKey,
}

/// Key material a device presents during on-boarding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Credentials {
    pub device_key: Option<Key>,
    pub sw_key: Option<Key>,
    pub local_cloud_sw_key: Option<Key>,
}

impl Credentials {
    /// Complete credentials for `device` in the cloud holding `cloud_key`.
    pub fn issued(device: &ComponentId, cloud_key: &Key) -> Self {
        Credentials {
            device_key: Some(Key::new(format!("device-key:{device}"))),
            sw_key: Some(Key::new(format!("sw-key:{device}"))),
            local_cloud_sw_key: Some(cloud_key.clone()),
        }
    }

    pub fn without(mut self, missing: impl IntoIterator<Item = Credential>) -> Self {
        for c in missing {
            match c {
                Credential::DeviceKey => self.device_key = None,
                Credential::SwKey => self.sw_key = None,
                Credential::LocalCloudSwKey => self.local_cloud_sw_key = None,
            }
        }
        self
    }

    pub fn flags(&self) -> CredentialFlags {
        CredentialFlags {
            device_key: self.device_key.is_some(),
            sw_key: self.sw_key.is_some(),
            local_cloud_sw_key: self.local_cloud_sw_key.is_some(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CredentialFlags {
    pub device_key: bool,
    pub sw_key: bool,
    pub local_cloud_sw_key: bool,
}

/// A device as the scenario knows it: what it holds and, for fault
/// injection, the step at which it is forced to fail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceProfile {
    pub credentials: Credentials,
    pub fail_at: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OnboardingPhase {
    Unenrolled,
    DevicePublished,
    Authenticated,
    SystemPublished,
    SystemAuthorised,
    ServicePublished,
    Onboarded,
    Rejected { step: u8, reason: String },
}

impl OnboardingPhase {
    fn successor(&self) -> Option<OnboardingPhase> {
        use OnboardingPhase::*;
        Some(match self {
            Unenrolled => DevicePublished,
            DevicePublished => Authenticated,
            Authenticated => SystemPublished,
            SystemPublished => SystemAuthorised,
            SystemAuthorised => ServicePublished,
            ServicePublished => Onboarded,
            Onboarded | Rejected { .. } => return None,
        })
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, OnboardingPhase::Onboarded | OnboardingPhase::Rejected { .. })
    }
}

impl fmt::Display for OnboardingPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OnboardingPhase::Unenrolled => f.write_str("unenrolled"),
            OnboardingPhase::DevicePublished => f.write_str("device_published"),
            OnboardingPhase::Authenticated => f.write_str("authenticated"),
            OnboardingPhase::SystemPublished => f.write_str("system_published"),
            OnboardingPhase::SystemAuthorised => f.write_str("system_authorised"),
            OnboardingPhase::ServicePublished => f.write_str("service_published"),
            OnboardingPhase::Onboarded => f.write_str("onboarded"),
            OnboardingPhase::Rejected { step, reason } => write!(f, "rejected(step {step}: {reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OnboardingState {
    pub device: ComponentId,
    pub phase: OnboardingPhase,
    pub credentials: CredentialFlags,
}

impl OnboardingState {
    pub fn new(device: ComponentId, credentials: CredentialFlags) -> Self {
        OnboardingState { device, phase: OnboardingPhase::Unenrolled, credentials }
    }

    /// Moves to the next phase. Phases cannot be skipped; rejection is
    /// possible from any non-terminal phase.
    pub fn advance(&mut self, next: OnboardingPhase) -> Result<(), String> {
        let allowed = match &next {
            OnboardingPhase::Rejected { .. } => !self.phase.is_terminal(),
            _ => self.phase.successor().as_ref() == Some(&next),
        };
        if !allowed {
            return Err(format!("device '{}': illegal transition {} -> {}", self.device, self.phase, next));
        }
        self.phase = next;
        Ok(())
    }
}

/// Devices that completed on-boarding. Membership is the only basis for a
/// trustworthiness check.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustRegistry {
    members: BTreeSet<ComponentId>,
}

impl TrustRegistry {
    pub fn admit(&mut self, state: &OnboardingState) -> Result<(), String> {
        if state.phase != OnboardingPhase::Onboarded {
            return Err(format!("device '{}' is {}, not onboarded", state.device, state.phase));
        }
        self.members.insert(state.device.clone());
        Ok(())
    }

    pub fn contains(&self, device: &ComponentId) -> bool {
        self.members.contains(device)
    }

    pub fn members(&self) -> impl Iterator<Item = &ComponentId> {
        self.members.iter()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub(super) const DEVICE_TASKS: [&str; 4] = ["1", "3", "5", "7"];
pub(super) const CLOUD_TASKS: [&str; 4] = ["2", "4", "6", "8"];

fn task(id: &str) -> TaskId {
    TaskId::from(id)
}

fn advance(world: &mut World, device: &ComponentId, next: OnboardingPhase) -> Result<(), SimError> {
    world
        .onboarding
        .get_mut(device)
        .ok_or_else(|| SimError::Handler(format!("no on-boarding state for '{device}'")))?
        .advance(next)
        .map_err(SimError::Handler)
}

fn reject(world: &mut World, device: &ComponentId, interaction: &InteractionId, step: u8, reason: &str) -> Result<(), SimError> {
    advance(world, device, OnboardingPhase::Rejected { step, reason: reason.to_string() })?;
    world.failures.insert(
        interaction.clone(),
        ScenarioError::RejectedAtStep { device: device.clone(), step, reason: reason.to_string() },
    );
    Ok(())
}

fn injected(world: &World, device: &ComponentId, step: u8) -> bool {
    world.devices.get(device).and_then(|p| p.fail_at) == Some(step)
}

/// Device side of the on-boarding interaction.
pub(super) fn device(ctx: &mut Ctx<'_, Msg, World>, d: Delivery<Msg>) -> Result<(), SimError> {
    let i = d.interaction;
    let me = ctx.me().clone();
    let cloud = ctx.world().cloud.clone();
    match d.message {
        Msg::Enroll => {
            ctx.execute_task(&task("1"), &i)?;
            ctx.send(&cloud, &i, Msg::OnboardingRequest)?;
        }
        Msg::Accepted => publish(ctx, &i, 3, OnboardingPhase::DevicePublished, |w, me| {
            Msg::DeviceRecord { device_key: w.devices[me].credentials.device_key.clone() }
        })?,
        Msg::Authenticated => publish(ctx, &i, 5, OnboardingPhase::SystemPublished, |w, me| {
            let c = &w.devices[me].credentials;
            Msg::SystemRecord { sw_key: c.sw_key.clone(), local_cloud_sw_key: c.local_cloud_sw_key.clone() }
        })?,
        Msg::SystemAuthorised => publish(ctx, &i, 7, OnboardingPhase::ServicePublished, |_, _| Msg::ServiceRecord)?,
        Msg::Enrolled => ctx.complete(&i)?,
        Msg::Rejected { step, reason } => ctx.abort(&i, format!("rejected at step {step}: {reason}"))?,
        other => return Err(SimError::Handler(format!("device '{me}' cannot handle {other} during on-boarding"))),
    }
    Ok(())
}

fn publish(
    ctx: &mut Ctx<'_, Msg, World>,
    i: &InteractionId,
    step: u8,
    next: OnboardingPhase,
    record: impl FnOnce(&World, &ComponentId) -> Msg,
) -> Result<(), SimError> {
    let me = ctx.me().clone();
    let cloud = ctx.world().cloud.clone();
    let outcome = ctx.execute_task_with(&task(&step.to_string()), i, |w| {
        if injected(w, &me, step) {
            Err("publish refused".to_string())
        } else {
            Ok(record(w, &me))
        }
    })?;
    match outcome {
        Ok(msg) => {
            advance(ctx.world_mut(), &me, next)?;
            ctx.send(&cloud, i, msg)?;
        }
        Err(reason) => {
            reject(ctx.world_mut(), &me, i, step, &reason)?;
            ctx.abort(i, format!("rejected at step {step}: {reason}"))?;
        }
    }
    Ok(())
}

/// Cloud side of the on-boarding interaction.
pub(super) fn cloud(ctx: &mut Ctx<'_, Msg, World>, d: Delivery<Msg>) -> Result<(), SimError> {
    let i = d.interaction;
    let device = match ctx.world().jobs.get(&i) {
        Some(Job::Onboarding { device }) => device.clone(),
        _ => return Err(SimError::Handler(format!("interaction '{i}' is not an on-boarding"))),
    };
    match d.message {
        Msg::OnboardingRequest => {
            ctx.execute_task(&task("2"), &i)?;
            ctx.send(&device, &i, Msg::Accepted)?;
        }
        Msg::DeviceRecord { device_key } => {
            let check = move |w: &World, dev: &ComponentId| match device_key {
                None => Err("device key missing".to_string()),
                Some(_) if injected(w, dev, 4) => Err("authentication refused".to_string()),
                Some(_) => Ok(()),
            };
            verify(ctx, &i, &device, 4, OnboardingPhase::Authenticated, Msg::Authenticated, check)?;
        }
        Msg::SystemRecord { sw_key, local_cloud_sw_key } => {
            let check = move |w: &World, dev: &ComponentId| {
                if sw_key.is_none() {
                    Err("SW key missing".to_string())
                } else if local_cloud_sw_key.as_ref() != Some(&w.cloud_key) {
                    Err("local-cloud SW key missing or wrong".to_string())
                } else if injected(w, dev, 6) {
                    Err("system authorisation refused".to_string())
                } else {
                    Ok(())
                }
            };
            verify(ctx, &i, &device, 6, OnboardingPhase::SystemAuthorised, Msg::SystemAuthorised, check)?;
        }
        Msg::ServiceRecord => {
            let check = |w: &World, dev: &ComponentId| {
                if injected(w, dev, 8) {
                    Err("service authorisation refused".to_string())
                } else {
                    Ok(())
                }
            };
            verify(ctx, &i, &device, 8, OnboardingPhase::Onboarded, Msg::Enrolled, check)?;
        }
        other => return Err(SimError::Handler(format!("cloud cannot handle {other} during on-boarding"))),
    }
    Ok(())
}

/// Runs cloud-side check `step`. On success advances the device to `next`
/// and sends `reply`; on failure rejects the device. Returns whether the
/// check passed.
fn verify(
    ctx: &mut Ctx<'_, Msg, World>,
    i: &InteractionId,
    device: &ComponentId,
    step: u8,
    next: OnboardingPhase,
    reply: Msg,
    check: impl FnOnce(&World, &ComponentId) -> Result<(), String>,
) -> Result<bool, SimError> {
    let outcome = ctx.execute_task_with(&task(&step.to_string()), i, |w| check(w, device))?;
    match outcome {
        Ok(()) => {
            advance(ctx.world_mut(), device, next)?;
            if step == 8 {
                // Admission happens before the device hears back.
                let w = ctx.world_mut();
                let state = w.onboarding[device].clone();
                w.trust.admit(&state).map_err(SimError::Handler)?;
            }
            ctx.send(device, i, reply)?;
            Ok(true)
        }
        Err(reason) => {
            reject(ctx.world_mut(), device, i, step, &reason)?;
            ctx.send(device, i, Msg::Rejected { step, reason })?;
            Ok(false)
        }
    }
}
