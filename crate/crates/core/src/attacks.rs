//! Scripted attacks, each runnable against either posture.
//!
//! Every injector expects a freshly built [`World`] and drives it forward from
//! its current clock. The rogue client holds an ordinary broker session but no
//! signing key.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{AuditBody, CommandBody, DocView, ShareBody};
use crate::broker::{MirrorWrapper, Posture, Topic};
use crate::envelope::{AgentId, AuthBlock, Codec, CorrelationId, Envelope, MsgType, SIGNATURE_LEN};
use crate::metrics::AttackRow;
use crate::netsim::PartitionEvent;
use crate::stateplane::{Changes, CommitOutcome, StateError, StateMode, StateRef};
use crate::world::{World, WorldConfig, WorldError, SHARED_REF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    MissingSender,
    SpoofedSender,
    Replay,
    DirectSafetyPublish,
    EmbeddedStateDrift,
    ForgedFlood,
    InducedFallback,
    PartitionBlackout,
}

impl AttackKind {
    pub const ALL: [AttackKind; 8] = [
        AttackKind::MissingSender,
        AttackKind::SpoofedSender,
        AttackKind::Replay,
        AttackKind::DirectSafetyPublish,
        AttackKind::EmbeddedStateDrift,
        AttackKind::ForgedFlood,
        AttackKind::InducedFallback,
        AttackKind::PartitionBlackout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::MissingSender => "missing_sender",
            AttackKind::SpoofedSender => "spoofed_sender",
            AttackKind::Replay => "replay",
            AttackKind::DirectSafetyPublish => "direct_safety_publish",
            AttackKind::EmbeddedStateDrift => "embedded_state_drift",
            AttackKind::ForgedFlood => "forged_flood",
            AttackKind::InducedFallback => "induced_fallback",
            AttackKind::PartitionBlackout => "partition_blackout",
        }
    }

    /// Human-readable row label.
    pub fn label(self) -> &'static str {
        match self {
            AttackKind::MissingSender => "Missing sender field",
            AttackKind::SpoofedSender => "Spoofed sender",
            AttackKind::Replay => "Replayed message",
            AttackKind::DirectSafetyPublish => "Direct safety publish",
            AttackKind::EmbeddedStateDrift => "Embedded state drift",
            AttackKind::ForgedFlood => "Forged message flood",
            AttackKind::InducedFallback => "Induced cloud fallback",
            AttackKind::PartitionBlackout => "Partition blackout",
        }
    }

    /// Attack-surface identifier the kind belongs to.
    pub fn surface(self) -> &'static str {
        match self {
            AttackKind::MissingSender
            | AttackKind::SpoofedSender
            | AttackKind::Replay
            | AttackKind::DirectSafetyPublish => "S1a",
            AttackKind::EmbeddedStateDrift => "S1b",
            AttackKind::ForgedFlood => "S1c",
            AttackKind::InducedFallback => "S2",
            AttackKind::PartitionBlackout => "S3",
        }
    }

    /// Kinds aimed at the message bus itself.
    pub fn is_bus_attack(self) -> bool {
        self.surface() == "S1a"
    }

    /// What a successful attack of this kind costs the deployment.
    pub fn impact(self) -> &'static str {
        match self {
            AttackKind::MissingSender => "Untraceable command",
            AttackKind::SpoofedSender => "Rogue agent frames others",
            AttackKind::Replay => "Command re-executed",
            AttackKind::DirectSafetyPublish => "Agent logic bypassed",
            AttackKind::EmbeddedStateDrift => "Agents act on divergent state",
            AttackKind::ForgedFlood => "Legitimate commands refused",
            AttackKind::InducedFallback => "Silent data egress",
            AttackKind::PartitionBlackout => "Actuation outside audit",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown attack kind {0:?}")]
pub struct UnknownAttack(pub String);

impl FromStr for AttackKind {
    type Err = UnknownAttack;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownAttack(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Envelope(#[from] crate::envelope::EnvelopeError),
    #[error("world has no {0}")]
    Missing(&'static str),
}

/// Partition phases, relative to the safety command that precedes them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionPlan {
    /// Client whose link drops; defaults to the actuating bridge.
    #[serde(default)]
    pub link: Option<String>,
    pub duration_us: u64,
    #[serde(default)]
    pub network_recovery_us: u64,
    #[serde(default)]
    pub bridge_setup_us: u64,
}

impl Default for PartitionPlan {
    /// The measured cellular failover: 2 s outage, 33.6 s for the network
    /// path to come back, 0.1 s of bridge setup.
    fn default() -> Self {
        Self {
            link: None,
            duration_us: 2_000_000,
            network_recovery_us: 33_600_000,
            bridge_setup_us: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackParams {
    pub flood_k: usize,
    pub fallback_request_bytes: u64,
    pub partition: PartitionPlan,
    /// How long before the partition the safety command goes out.
    pub command_lead_us: u64,
    pub device: String,
    pub action: String,
    /// Agents writing the shared document concurrently.
    pub drift_writers: usize,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            flood_k: 20,
            fallback_request_bytes: 109 * 1024,
            partition: PartitionPlan::default(),
            command_lead_us: 1_000,
            device: "front_door".into(),
            action: "lock".into(),
            drift_writers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionVerdict {
    pub principal: AgentId,
    pub topic: Topic,
    pub verdict: String,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub kind: AttackKind,
    pub posture: Posture,
    /// Broker verdicts on the attacker's own publishes.
    pub verdicts: Vec<InjectionVerdict>,
    /// Device executions the attack caused.
    pub executions: usize,
    pub audit_records: usize,
    pub detections: Vec<String>,
    pub evidence: BTreeMap<String, Value>,
}

impl AttackOutcome {
    fn new(kind: AttackKind, posture: Posture) -> Self {
        Self {
            kind,
            posture,
            verdicts: Vec::new(),
            executions: 0,
            audit_records: 0,
            detections: Vec::new(),
            evidence: BTreeMap::new(),
        }
    }

    fn note(&mut self, key: &str, v: impl Serialize) {
        self.evidence.insert(key.into(), serde_json::to_value(v).expect("evidence serializes"));
    }

    /// True when every injected publish got through (false if none were made).
    pub fn accepted(&self) -> bool {
        !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.accepted)
    }

    pub fn broker_response(&self) -> String {
        if self.verdicts.is_empty() {
            return "n/a".into();
        }
        if self.accepted() {
            return "Accepted".into();
        }
        let mut reasons: Vec<&str> = self
            .verdicts
            .iter()
            .filter(|v| !v.accepted)
            .map(|v| {
                v.verdict
                    .strip_prefix("rejected(")
                    .and_then(|r| r.strip_suffix(')'))
                    .unwrap_or(&v.verdict)
            })
            .collect();
        reasons.dedup();
        format!("Rejected ({})", reasons.join(", "))
    }

    /// Whether the attack achieved its effect.
    pub fn succeeded(&self) -> bool {
        let flag = |k: &str| self.evidence.get(k).and_then(Value::as_bool).unwrap_or(false);
        match self.kind {
            AttackKind::MissingSender | AttackKind::SpoofedSender | AttackKind::DirectSafetyPublish => {
                self.accepted() && self.executions > 0
            }
            AttackKind::Replay => self.accepted() && self.executions > 0,
            AttackKind::EmbeddedStateDrift => {
                self.evidence.get("divergent_copies").and_then(Value::as_u64).unwrap_or(0) > 1
                    && !flag("conflict_detected")
            }
            AttackKind::ForgedFlood => !flag("first_attempt_obeyed"),
            AttackKind::InducedFallback => {
                self.evidence.get("egress_entries").and_then(Value::as_u64).unwrap_or(0) > 0
                    && self.evidence.get("markers").and_then(Value::as_u64).unwrap_or(0) == 0
            }
            AttackKind::PartitionBlackout => {
                self.evidence.get("unaudited_actuations").and_then(Value::as_u64).unwrap_or(0) > 0
            }
        }
    }

    pub fn to_row(&self) -> AttackRow {
        let impact = if self.succeeded() {
            self.kind.impact().to_string()
        } else {
            "Blocked".to_string()
        };
        AttackRow {
            kind: self.kind.as_str().into(),
            surface: self.kind.surface().into(),
            label: self.kind.label().into(),
            broker_response: self.broker_response(),
            impact,
            evidence: self.evidence.clone(),
        }
    }
}

/// Runs one attack against `world`, which should be freshly built.
pub fn run_attack(kind: AttackKind, params: &AttackParams, world: &mut World) -> Result<AttackOutcome, AttackError> {
    let mut out = AttackOutcome::new(kind, world.config.posture);
    let log_start = world.broker.log().len();
    match kind {
        AttackKind::MissingSender | AttackKind::SpoofedSender | AttackKind::DirectSafetyPublish => {
            bus_injection(kind, params, world, &mut out)?
        }
        AttackKind::Replay => replay(params, world, &mut out)?,
        AttackKind::EmbeddedStateDrift => drift(params, world, &mut out)?,
        AttackKind::ForgedFlood => flood(params, world, &mut out)?,
        AttackKind::InducedFallback => fallback(params, world, &mut out)?,
        AttackKind::PartitionBlackout => blackout(params, world, &mut out)?,
    }
    let rogue = world.rogue();
    out.verdicts = world.broker.log()[log_start..]
        .iter()
        .filter(|e| e.principal == rogue)
        .map(|e| InjectionVerdict {
            principal: e.principal.clone(),
            topic: e.topic.clone(),
            verdict: e.verdict.label(),
            accepted: e.verdict.is_accepted(),
        })
        .collect();
    Ok(out)
}

/// Runs every kind in declaration order, each in its own fresh world.
pub fn run_suite(config: &WorldConfig, params: &AttackParams) -> Result<Vec<AttackOutcome>, AttackError> {
    AttackKind::ALL
        .into_iter()
        .map(|kind| {
            let mut world = World::new(config.clone())?;
            run_attack(kind, params, &mut world)
        })
        .collect()
}

fn bridge_of(world: &World) -> Result<AgentId, AttackError> {
    world.bridge().cloned().ok_or(AttackError::Missing("bridge"))
}

fn device_executions(world: &World, bridge: &AgentId, device: &str) -> usize {
    world
        .agent(bridge)
        .map(|a| a.executions.iter().filter(|e| e.device == device).count())
        .unwrap_or(0)
}

fn actuation_audits(world: &World) -> Vec<Option<CorrelationId>> {
    world
        .mirror_wrappers()
        .iter()
        .filter(|w| w.topic == Topic::audit())
        .filter_map(|w| Codec::default().decode(&w.message, crate::envelope::DecodeMode::Lenient).ok())
        .filter_map(|(env, _)| match AuditBody::parse(&env.payload) {
            Some(AuditBody::Actuation(r)) => Some(r.correlation_id),
            _ => None,
        })
        .collect()
}

const SETTLE_US: u64 = 2_000_000;

fn bus_injection(
    kind: AttackKind,
    params: &AttackParams,
    world: &mut World,
    out: &mut AttackOutcome,
) -> Result<(), AttackError> {
    let bridge = bridge_of(world)?;
    let rogue = world.rogue();
    let body = CommandBody::actuate(&params.device, &params.action).to_bytes();
    let now = world.now_us();
    let corr = CorrelationId::random(world.rng());
    let before = device_executions(world, &bridge, &params.device);
    let audits_before = actuation_audits(world).len();

    let (topic, bytes) = match kind {
        AttackKind::MissingSender => {
            let env = Envelope {
                sender: None,
                msg_type: MsgType::Command,
                timestamp_us: now,
                correlation_id: Some(corr),
                payload: body,
            };
            (Topic::inbox(bridge.as_str()), world.encode_from(&rogue, &env)?)
        }
        AttackKind::SpoofedSender => {
            let victim = world.orchestrator().clone();
            let env = Envelope::new(victim.clone(), MsgType::Command, now, corr, body);
            let forged = match world.config.posture {
                // Under the hardened broker an unsigned frame would be turned
                // away before the signature check; a forged auth block is the
                // attacker's best attempt at impersonation.
                Posture::Hardened => {
                    let mut signature = [0u8; SIGNATURE_LEN];
                    world.rng().fill_bytes(&mut signature);
                    let auth = AuthBlock {
                        key_id: format!("{victim}-k1"),
                        nonce: u128::from(world.rng().next_u64()) << 64 | u128::from(world.rng().next_u64()),
                        counter: u64::MAX / 2,
                        signature,
                    };
                    Codec::default().encode(&env, Some(&auth))?
                }
                Posture::Baseline => world.encode_from(&rogue, &env)?,
            };
            out.note("claimed_sender", &victim);
            (Topic::inbox(bridge.as_str()), forged)
        }
        AttackKind::DirectSafetyPublish => {
            let env = Envelope::new(rogue.clone(), MsgType::Command, now, corr, body);
            (Topic::actuate(&params.device), world.encode_from(&rogue, &env)?)
        }
        _ => unreachable!("not a bus injection"),
    };
    world.send_raw(&rogue, &topic, bytes);
    world.run_for(SETTLE_US);

    out.executions = device_executions(world, &bridge, &params.device) - before;
    let audits = actuation_audits(world);
    out.audit_records = audits.len() - audits_before;
    let execs: Vec<_> = world.agent(&bridge).map(|a| a.executions[before..].to_vec()).unwrap_or_default();
    out.note("bridge_actuated", out.executions > 0);
    out.note("unaudited_executions", execs.iter().filter(|e| !e.audited).count());
    out.note("attributed_to", execs.iter().map(|e| e.issued_by.as_ref().map(AgentId::to_string)).collect::<Vec<_>>());
    Ok(())
}

fn replay(params: &AttackParams, world: &mut World, out: &mut AttackOutcome) -> Result<(), AttackError> {
    let bridge = bridge_of(world)?;
    let rogue = world.rogue();
    let inbox = Topic::inbox(bridge.as_str());
    let legit = world.issue_command(&params.device, &params.action)?;
    world.run_for(SETTLE_US);

    // Prefer bytes seen through the mirror; fall back to the raw wire.
    let from_mirror = world
        .captures
        .iter()
        .filter(|c| c.topic == Topic::mirror())
        .filter_map(|c| MirrorWrapper::decode(&c.bytes).ok())
        .find(|w| w.topic == inbox)
        .map(|w| (w.topic, w.message));
    let (source, captured) = match from_mirror {
        Some(c) => ("mirror", Some(c)),
        None => (
            "wire",
            world
                .wire
                .iter()
                .find(|f| &f.from == world.orchestrator() && f.topic == inbox)
                .map(|f| (f.topic.clone(), f.bytes.clone())),
        ),
    };
    let Some((topic, bytes)) = captured else {
        return Err(AttackError::Missing("captured command"));
    };
    out.note("capture_source", source);

    let before = device_executions(world, &bridge, &params.device);
    world.send_raw(&rogue, &topic, bytes);
    world.run_for(SETTLE_US);
    out.executions = device_executions(world, &bridge, &params.device) - before;
    let audits = actuation_audits(world);
    let same = audits.iter().filter(|c| **c == Some(legit)).count();
    out.audit_records = same.saturating_sub(1);
    out.note("bridge_actuated", out.executions > 0);
    out.note("total_executions", before + out.executions);
    out.note("audit_records_for_correlation", same);
    out.note("correlation_id", legit);
    Ok(())
}

fn drift(params: &AttackParams, world: &mut World, out: &mut AttackOutcome) -> Result<(), AttackError> {
    const DOC: &str = "plan";
    let mut writers: Vec<AgentId> = world.agents().map(|a| a.id().clone()).collect();
    // orchestrator first so it seeds the document
    writers.sort_by_key(|w| (w != world.orchestrator(), w.clone()));
    let holders: Vec<AgentId> = writers.iter().take(2).cloned().collect();
    let [owner, peer] = holders.as_slice() else {
        return Err(AttackError::Missing("second agent"));
    };
    let (owner, peer) = (owner.clone(), peer.clone());
    let active: Vec<AgentId> = [owner.clone(), peer.clone()].into_iter().take(params.drift_writers).collect();
    let mode = world.config.state_mode;
    out.note("mode", mode);
    out.note("writers", active.len());

    let share = |world: &mut World, from: &AgentId, to: &AgentId, body: ShareBody| {
        let now = world.now_us();
        let topic = Topic::inbox(to.as_str());
        let agent = world.agent(from).expect("agent exists").clone();
        let r = agent.share(&topic, &body, now, world.rng());
        if let crate::agents::Reaction::Publish { topic, envelope, durable } = r {
            world.agent_publish(from, topic, envelope, durable);
        }
    };

    match mode {
        StateMode::Embedded => {
            let v0 = "v0".to_string();
            world.agent_mut(&owner).expect("owner").docs.insert(DOC.into(), DocView::Embedded(v0.clone()));
            share(world, &owner, &peer, ShareBody::Embedded { doc: DOC.into(), content: v0 });
            world.run_for(SETTLE_US);
            // concurrent edits, each pushed to the other as a full copy
            for w in &active {
                let edited = format!("v0|{w}");
                world.agent_mut(w).expect("writer").docs.insert(DOC.into(), DocView::Embedded(edited.clone()));
                let other = if *w == owner { &peer } else { &owner };
                share(world, w, other, ShareBody::Embedded { doc: DOC.into(), content: edited });
            }
            world.run_for(SETTLE_US);
        }
        StateMode::StatePlane => {
            let now = world.now_us();
            let base = commit(world, &owner, None, now, "v0")?.ok_or(AttackError::Missing("base commit"))?;
            let reference = |commit| StateRef {
                ref_name: SHARED_REF.into(),
                commit,
                path: DOC.into(),
            };
            world.agent_mut(&owner).expect("owner").docs.insert(DOC.into(), DocView::Reference(reference(base)));
            share(world, &owner, &peer, ShareBody::Reference(reference(base)));
            world.run_for(SETTLE_US);
            // every writer edits from the same base; the store serializes them
            let mut last = base;
            for w in active.iter().rev() {
                let now = world.now_us();
                let mut parent = base;
                let mut attempts = 0;
                let id = loop {
                    attempts += 1;
                    let current = world.store.read_at(&parent, DOC)?.map(<[u8]>::to_vec).unwrap_or_default();
                    let content = format!("{}|{w}", String::from_utf8_lossy(&current));
                    match commit(world, w, Some(parent), now, &content)? {
                        Some(id) => break id,
                        None => {
                            out.detections.push(format!("conflict reported to {w}"));
                            parent = world.store.head(SHARED_REF)?.ok_or(AttackError::Missing("head"))?;
                        }
                    }
                };
                out.note(&format!("attempts_{w}"), attempts);
                last = id;
                world.agent_mut(w).expect("writer").docs.insert(DOC.into(), DocView::Reference(reference(id)));
                let other = if *w == owner { &peer } else { &owner };
                share(world, w, other, ShareBody::Reference(reference(id)));
                world.run_for(SETTLE_US);
            }
            out.note("head", last);
        }
    }
    let conflicts = world.store.conflicts().len();
    out.note("divergent_copies", world.divergence(DOC));
    out.note("conflicts", conflicts);
    out.note("conflict_detected", conflicts > 0);
    Ok(())
}

fn commit(world: &mut World, author: &AgentId, parent: Option<crate::stateplane::CommitId>, now: u64, content: &str)
    -> Result<Option<crate::stateplane::CommitId>, AttackError> {
    let changes: Changes = BTreeMap::from([("plan".to_string(), Some(content.as_bytes().to_vec()))]);
    Ok(match world.store.commit(SHARED_REF, parent, author, now, &changes, "edit plan")? {
        CommitOutcome::Committed(id) => Some(id),
        CommitOutcome::Conflict(_) => None,
    })
}

fn obeyed(world: &World, c: CorrelationId) -> bool {
    world
        .agent(world.orchestrator())
        .is_some_and(|a| a.obeyed.iter().any(|o| o.received == Some(c)))
}

fn flood(params: &AttackParams, world: &mut World, out: &mut AttackOutcome) -> Result<(), AttackError> {
    let orch = world.orchestrator().clone();
    let rogue = world.rogue();
    let peer = world
        .agents()
        .map(|a| a.id().clone())
        .find(|a| *a != orch)
        .ok_or(AttackError::Missing("peer agent"))?;
    let body = CommandBody::actuate(&params.device, &params.action);

    // give the orchestrator a fresh heartbeat to check forgeries against
    world.heartbeat_now(&peer);
    world.run_for(SETTLE_US);

    let forged_body = CommandBody::Actuate {
        device: params.device.clone(),
        action: "unlock".into(),
        note: Some(crate::trust::NONSENSE_TAG.into()),
    }
    .to_bytes();
    for _ in 0..params.flood_k {
        let corr = CorrelationId::random(world.rng());
        let env = Envelope::new(peer.clone(), MsgType::Command, 0, corr, forged_body.clone());
        let bytes = world.encode_from(&rogue, &env)?;
        world.send_raw(&rogue, &Topic::inbox(orch.as_str()), bytes);
    }
    world.run_for(SETTLE_US);

    let first = world.operator_command(&orch, &body)?;
    world.run_for(SETTLE_US);
    let first_ok = obeyed(world, first);
    out.note("forged", params.flood_k);
    out.note("first_attempt_obeyed", first_ok);
    out.note("required_oob", !first_ok);

    let mut resolved = first_ok;
    if !first_ok {
        let at = world.now_us() + world.config.oob.response_delay_us;
        world.schedule_oob_confirm(&orch, at);
        world.run_until(at);
        let retry = world.operator_command(&orch, &body)?;
        world.run_for(SETTLE_US);
        resolved = obeyed(world, retry);
    }
    out.note("legitimate_obeyed_eventually", resolved);

    let end = world.now_us();
    let agent = world.agent(&orch).ok_or(AttackError::Missing("orchestrator"))?;
    if let Some(t) = &agent.trust {
        let report = t.lockout_report(end);
        out.detections.extend(t.events().iter().map(|e| format!("{e:?}")));
        out.note("lockout_us", report.lockout_us);
        out.note("lockout", &report);
    }
    out.executions = agent.obeyed.len();
    Ok(())
}

fn fallback(params: &AttackParams, world: &mut World, out: &mut AttackOutcome) -> Result<(), AttackError> {
    let mobile = world
        .first_with_role(crate::agents::Role::Mobile)
        .ok_or(AttackError::Missing("mobile agent"))?;
    let call = world.orchestrator_command(
        &mobile,
        &CommandBody::Analyze {
            request_bytes: params.fallback_request_bytes,
            label: None,
        },
    );
    world.run_for(SETTLE_US);
    let report = world.egress_report();
    let obs = world.mirror_observations();
    out.note("call", call);
    out.note("request_bytes", params.fallback_request_bytes);
    out.note("egress_entries", world.ledger.len());
    out.note("egress_bytes", report.total_bytes);
    out.note("dns_queries", world.dns.len());
    out.note("resolved", world.dns.events().iter().map(|e| e.address.clone()).collect::<std::collections::BTreeSet<_>>());
    out.note("markers", obs.markers.len());
    out.note("coordination_anomalies", obs.anomalies.len());
    let crossings = world.crossings();
    out.detections = crossings
        .iter()
        .filter(|c| !c.visible_at.is_empty())
        .map(|c| format!("crossing {} visible at {:?}", c.call, c.visible_at))
        .collect();
    out.note("crossings", &crossings);
    Ok(())
}

fn blackout(params: &AttackParams, world: &mut World, out: &mut AttackOutcome) -> Result<(), AttackError> {
    let bridge = bridge_of(world)?;
    let link = params.partition.link.clone().unwrap_or_else(|| bridge.to_string());
    let issued_at = world.now_us();
    let c = world.issue_command(&params.device, &params.action)?;
    let p = PartitionEvent {
        link,
        start_us: issued_at + params.command_lead_us,
        duration_us: params.partition.duration_us,
        network_recovery_us: params.partition.network_recovery_us,
        bridge_setup_us: params.partition.bridge_setup_us,
    };
    let idx = world.apply_partition(p.clone())?;
    let horizon = p.link_up_us() + 10 * SETTLE_US;
    world.run_until(horizon);

    let d = world.decomposition(idx).ok_or(AttackError::Missing("restored session"))?;
    let completed = world
        .agent(&bridge)
        .and_then(|a| a.executions.iter().find(|e| e.correlation_id == Some(c)))
        .and_then(|e| e.completed_us);
    let visible = world.audit_receipts().iter().find(|r| r.correlation_id == c).map(|r| r.received_us);
    out.executions = usize::from(completed.is_some());
    out.audit_records = usize::from(visible.is_some());
    out.note("correlation_id", c);
    out.note("command_published_us", issued_at);
    out.note("completed_us", completed);
    out.note("audit_visible_us", visible);
    out.note("window_us", d.total_blackout_us);
    out.note("unaudited_us", visible.zip(completed).map(|(v, c)| v.saturating_sub(c)));
    out.note("gap_us", visible.map(|v| v - issued_at));
    out.note("unaudited_actuations", d.unaudited_actuations);
    out.note("decomposition", &d);
    Ok(())
}
