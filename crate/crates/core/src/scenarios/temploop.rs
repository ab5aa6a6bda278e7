//! Closed-loop temperature control between two on-boarded devices.
//!
//! Baseline step order, one interaction per control period:
//!
//! 1. sensor device measures the room temperature (ordinary)
//! 2. sensor device receives the reading (ordinary)
//! 3. sensor device asks the cloud whether the actuator device is trusted
//! 4. cloud answers
//! 5. sensor device encrypts the reading
//! 6. sensor device transmits the ciphertext (ordinary)
//! 7. actuator device asks the cloud whether the sensor device is trusted
//! 8. cloud answers
//! 9. actuator device decrypts
//! 10. actuator device checks whether the limit is exceeded (ordinary)
//! 11. actuator device cools the room when `reading > limit` (ordinary)
//!
//! With [`LoopOrdering::LimitFirst`] the sensor device runs the limit check
//! right after step 2 and skips steps 3..=9 (and 11) when the limit is not
//! exceeded.

use std::fmt;

use serde::Deserialize;

use super::cipher::{decrypt, encrypt};
use super::{Job, Msg, ScenarioError, TrustSlot, Verdict, World};
use crate::ids::{ComponentId, InteractionId, TaskId};
use crate::simkernel::{Ctx, Delivery, SimError};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopOrdering {
    #[default]
    Baseline,
    LimitFirst,
}

impl fmt::Display for LoopOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopOrdering::Baseline => "baseline",
            LoopOrdering::LimitFirst => "limit_first",
        })
    }
}

/// Temperatures are exact rationals in degrees Celsius.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TempLoopConfig {
    pub reading: Value,
    pub limit: Value,
    pub ordering: LoopOrdering,
}

impl TempLoopConfig {
    pub fn new(reading: impl Into<Value>, limit: impl Into<Value>, ordering: LoopOrdering) -> Self {
        TempLoopConfig { reading: reading.into(), limit: limit.into(), ordering }
    }

    pub fn exceeded(&self) -> bool {
        self.reading > self.limit
    }

    /// `(role, task)` pairs the interaction must execute to complete, where
    /// role is 0 = sensor, 1 = actuator, 2 = cloud.
    pub(super) fn mandatory(&self) -> Vec<(usize, &'static str)> {
        let secured = [(0, "3"), (2, "4"), (0, "5"), (0, "6"), (1, "7"), (2, "8"), (1, "9")];
        let mut out = vec![(0, "1"), (0, "2")];
        match self.ordering {
            LoopOrdering::Baseline => {
                out.extend(secured);
                out.push((1, "10"));
                if self.exceeded() {
                    out.push((1, "11"));
                }
            }
            LoopOrdering::LimitFirst => {
                out.push((0, "10"));
                if self.exceeded() {
                    out.extend(secured);
                    out.push((1, "11"));
                }
            }
        }
        out
    }
}

/// Per-interaction state of one control period.
#[derive(Debug, Clone)]
pub(crate) struct LoopJob {
    pub config: TempLoopConfig,
    pub sensor: ComponentId,
    pub actuator: ComponentId,
    pub ciphertext: Option<Vec<u8>>,
    pub actuated: bool,
}

fn task(id: &str) -> TaskId {
    TaskId::from(id)
}

fn loop_job<'w>(w: &'w mut World, i: &InteractionId) -> Result<&'w mut LoopJob, SimError> {
    match w.jobs.get_mut(i) {
        Some(Job::Loop(job)) => Ok(job),
        _ => Err(SimError::Handler(format!("interaction '{i}' is not a control loop"))),
    }
}

/// Sends a trust query for `subject` after running the requester-side task.
fn ask_trust(
    ctx: &mut Ctx<'_, Msg, World>,
    i: &InteractionId,
    slot: TrustSlot,
    subject: ComponentId,
) -> Result<(), SimError> {
    let cloud = ctx.world().cloud.clone();
    ctx.execute_task(&task(slot.requester_task()), i)?;
    ctx.send(&cloud, i, Msg::TrustQuery { subject, slot })?;
    Ok(())
}

fn fail(ctx: &mut Ctx<'_, Msg, World>, i: &InteractionId, err: ScenarioError) -> Result<(), SimError> {
    let reason = err.to_string();
    ctx.world_mut().failures.insert(i.clone(), err);
    ctx.abort(i, reason)
}

fn verdict_error(verdict: Verdict, requester: &ComponentId, subject: &ComponentId) -> Option<ScenarioError> {
    match verdict {
        Verdict::Trusted => None,
        Verdict::Untrusted => Some(ScenarioError::TrustFailure { requester: requester.clone(), subject: subject.clone() }),
        Verdict::RequesterUntrusted => Some(ScenarioError::UntrustedRequester(requester.clone())),
    }
}

/// Any device during the control phase. What it does depends on the
/// interaction's job and the message.
pub(super) fn device(ctx: &mut Ctx<'_, Msg, World>, d: Delivery<Msg>) -> Result<(), SimError> {
    let i = d.interaction;
    let me = ctx.me().clone();
    match d.message {
        Msg::CheckTrust => {
            let (subject, slot) = match ctx.world().jobs.get(&i) {
                Some(Job::Trust { subject, slot, .. }) => (subject.clone(), *slot),
                _ => return Err(SimError::Handler(format!("interaction '{i}' is not a trust check"))),
            };
            ask_trust(ctx, &i, slot, subject)
        }
        Msg::Sample => sample(ctx, &i),
        Msg::TrustVerdict { subject, slot, verdict } => {
            if let Some(Job::Trust { verdict: v, .. }) = ctx.world_mut().jobs.get_mut(&i) {
                *v = Some(verdict);
                return match verdict_error(verdict, &me, &subject) {
                    Some(err @ ScenarioError::UntrustedRequester(_)) => fail(ctx, &i, err),
                    _ => ctx.complete(&i),
                };
            }
            if let Some(err) = verdict_error(verdict, &me, &subject) {
                return fail(ctx, &i, err);
            }
            match slot {
                TrustSlot::Sender => encrypt_and_transmit(ctx, &i),
                TrustSlot::Receiver => decrypt_and_act(ctx, &i),
            }
        }
        Msg::Ciphertext(ct) => {
            let job = loop_job(ctx.world_mut(), &i)?;
            job.ciphertext = Some(ct);
            let sensor = job.sensor.clone();
            ask_trust(ctx, &i, TrustSlot::Receiver, sensor)
        }
        other => Err(SimError::Handler(format!("device '{me}' cannot handle {other} in the control phase"))),
    }
}

fn sample(ctx: &mut Ctx<'_, Msg, World>, i: &InteractionId) -> Result<(), SimError> {
    let job = loop_job(ctx.world_mut(), i)?.clone();
    ctx.execute_task(&task("1"), i)?;
    ctx.sense(i, format!("{} degC", job.config.reading))?;
    ctx.execute_task(&task("2"), i)?;
    if job.config.ordering == LoopOrdering::LimitFirst {
        let exceeded = job.config.exceeded();
        ctx.execute_task(&task("10"), i)?;
        if !exceeded {
            return ctx.complete(i);
        }
    }
    ask_trust(ctx, i, TrustSlot::Sender, job.actuator)
}

fn encrypt_and_transmit(ctx: &mut Ctx<'_, Msg, World>, i: &InteractionId) -> Result<(), SimError> {
    let me = ctx.me().clone();
    let job = loop_job(ctx.world_mut(), i)?.clone();
    let payload = job.config.reading.to_string();
    let sealed = ctx.execute_task_with(&task("5"), i, |w| {
        let key = w.devices[&me]
            .credentials
            .local_cloud_sw_key
            .clone()
            .ok_or_else(|| "no shared key".to_string())?;
        let nonce = w.next_nonce();
        Ok(encrypt(payload.as_bytes(), &key, nonce))
    })?;
    let mut ct = match sealed {
        Ok(ct) => ct,
        Err(reason) => return fail(ctx, i, ScenarioError::EncryptFailure(reason)),
    };
    ctx.execute_task(&task("6"), i)?;
    if ctx.world().tamper_link {
        if let Some(b) = ct.get_mut(8) {
            *b ^= 0x01;
        }
    }
    ctx.send(&job.actuator, i, Msg::Ciphertext(ct))?;
    Ok(())
}

fn decrypt_and_act(ctx: &mut Ctx<'_, Msg, World>, i: &InteractionId) -> Result<(), SimError> {
    let me = ctx.me().clone();
    let job = loop_job(ctx.world_mut(), i)?.clone();
    let ct = job
        .ciphertext
        .clone()
        .ok_or_else(|| SimError::Handler(format!("no ciphertext received in '{i}'")))?;
    let opened = ctx.execute_task_with(&task("9"), i, |w| {
        let key = w.devices[&me]
            .credentials
            .local_cloud_sw_key
            .clone()
            .ok_or_else(|| "no shared key".to_string())?;
        let plain = decrypt(&ct, &key).map_err(|e| e.to_string())?;
        let text = String::from_utf8(plain).map_err(|_| "payload is not UTF-8".to_string())?;
        text.parse::<Value>().map_err(|e| e.to_string())
    })?;
    let reading = match opened {
        Ok(v) => v,
        Err(reason) => return fail(ctx, i, ScenarioError::DecryptFailure(reason)),
    };

    let exceeded = match job.config.ordering {
        LoopOrdering::Baseline => {
            let limit = job.config.limit;
            ctx.execute_task_with(&task("10"), i, |_| Ok::<_, String>(reading > limit))?
                .expect("limit check cannot fail")
        }
        // The sensor only transmits once the limit is exceeded.
        LoopOrdering::LimitFirst => true,
    };
    if exceeded {
        ctx.execute_task(&task("11"), i)?;
        ctx.actuate(i, "cool")?;
        loop_job(ctx.world_mut(), i)?.actuated = true;
    }
    ctx.complete(i)
}

/// The cloud's half of every trust check: runs the cloud-side task and
/// answers from the trust registry.
pub(super) fn cloud(ctx: &mut Ctx<'_, Msg, World>, d: Delivery<Msg>) -> Result<(), SimError> {
    let i = d.interaction;
    match d.message {
        Msg::TrustQuery { subject, slot } => {
            let requester = d
                .from
                .ok_or_else(|| SimError::Handler("trust query without a requester".to_string()))?;
            let verdict = ctx
                .execute_task_with(&task(slot.cloud_task()), &i, |w| {
                    Ok::<_, String>(if !w.trust.contains(&requester) {
                        Verdict::RequesterUntrusted
                    } else if w.trust.contains(&subject) {
                        Verdict::Trusted
                    } else {
                        Verdict::Untrusted
                    })
                })?
                .expect("registry lookup cannot fail");
            ctx.send(&requester, &i, Msg::TrustVerdict { subject, slot, verdict })?;
            Ok(())
        }
        other => Err(SimError::Handler(format!("cloud cannot handle {other} in the control phase"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(cfg: TempLoopConfig) -> Vec<String> {
        cfg.mandatory().iter().map(|(r, t)| format!("{r}:{t}")).collect()
    }

    #[test]
    fn limit_first_below_limit_needs_only_local_steps() {
        let cfg = TempLoopConfig::new(Value::from(20), Value::from(25), LoopOrdering::LimitFirst);
        assert_eq!(ids(cfg), ["0:1", "0:2", "0:10"]);
    }

    #[test]
    fn baseline_at_limit_does_not_actuate() {
        let cfg = TempLoopConfig::new(Value::from(25), Value::from(25), LoopOrdering::Baseline);
        assert!(!cfg.exceeded());
        assert!(!ids(cfg).contains(&"1:11".to_string()));
        assert_eq!(ids(cfg).len(), 10);
    }

    #[test]
    fn above_limit_both_orderings_cover_all_security_tasks() {
        for ordering in [LoopOrdering::Baseline, LoopOrdering::LimitFirst] {
            let cfg = TempLoopConfig::new(Value::from(30), Value::from(25), ordering);
            let m = ids(cfg);
            for t in ["0:3", "2:4", "0:5", "1:7", "2:8", "1:9", "1:11"] {
                assert!(m.contains(&t.to_string()), "{ordering}: {t}");
            }
        }
    }
}
