//! Role state machines. Agents never touch the network: they take one inbound
//! envelope (or timer) and return [`Reaction`]s for the event loop to carry out.

use std::collections::BTreeMap;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::broker::{Topic, ACTUATE_PREFIX};
use crate::envelope::{AgentId, CorrelationId, Envelope, MsgType, VerificationResult};
use crate::sovereignty::{
    authorize_egress, BoundaryMarker, BoundaryPolicy, DnsEvent, DnsLog, EgressCause, EgressDecision,
    EgressEntry, EgressLedger,
};
use crate::stateplane::StateRef;
use crate::trust::{Assessment, TrustState};

pub const DEFAULT_CONTEXT_CAPACITY: u64 = 64 * 1024;
pub const DEFAULT_DNS_QUERIES_PER_CALL: u32 = 10;

pub const STATUS_OK: u16 = 200;
pub const STATUS_FORBIDDEN: u16 = 403;
pub const STATUS_NOT_FOUND: u16 = 404;
/// What a local model server answers when the request overflows its context.
pub const STATUS_CANCELLED: u16 = 499;
pub const STATUS_UNAVAILABLE: u16 = 503;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Orchestrator,
    Mobile,
    Bridge,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Orchestrator => "orchestrator",
            Role::Mobile => "mobile",
            Role::Bridge => "bridge",
        })
    }
}

/// Local model first, cloud second. An agent with no local endpoint is a
/// cloud-hosted deployment: every call goes out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceChain {
    #[serde(default = "default_capacity")]
    pub context_capacity_bytes: u64,
    #[serde(default = "default_local")]
    pub local: Option<String>,
    #[serde(default)]
    pub cloud: Option<String>,
}

fn default_capacity() -> u64 {
    DEFAULT_CONTEXT_CAPACITY
}

fn default_local() -> Option<String> {
    Some("local".into())
}

impl Default for InferenceChain {
    fn default() -> Self {
        Self {
            context_capacity_bytes: DEFAULT_CONTEXT_CAPACITY,
            local: default_local(),
            cloud: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: AgentId,
    pub role: Role,
    /// Link profile name; absent means co-located with the broker.
    #[serde(default)]
    pub link: Option<String>,
    #[serde(default)]
    pub inference: Option<InferenceChain>,
    #[serde(default)]
    pub heartbeat_interval_us: Option<u64>,
}

impl AgentSpec {
    pub fn new(id: &str, role: Role) -> Self {
        Self {
            id: AgentId::new(id).expect("valid agent id"),
            role,
            link: None,
            inference: None,
            heartbeat_interval_us: None,
        }
    }

    pub fn with_link(mut self, profile: &str) -> Self {
        self.link = Some(profile.into());
        self
    }

    pub fn with_inference(mut self, chain: InferenceChain) -> Self {
        self.inference = Some(chain);
        self
    }

    pub fn with_heartbeat(mut self, interval_us: u64) -> Self {
        self.heartbeat_interval_us = Some(interval_us);
        self
    }

    pub fn key_id(&self) -> String {
        format!("{}-k1", self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Lock,
    Light,
    Switch,
    Sensor,
    Valve,
    Relay,
}

impl DeviceKind {
    pub fn default_duration_us(self) -> u64 {
        match self {
            DeviceKind::Lock => 500_000,
            DeviceKind::Valve => 1_000_000,
            DeviceKind::Light => 200_000,
            DeviceKind::Switch => 50_000,
            DeviceKind::Relay => 5_000,
            DeviceKind::Sensor => 1_000,
        }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("kind serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: String,
    pub kind: DeviceKind,
    #[serde(default)]
    pub actuation_duration_us: Option<u64>,
}

impl DeviceSpec {
    pub fn new(id: &str, kind: DeviceKind) -> Self {
        Self {
            id: id.into(),
            kind,
            actuation_duration_us: None,
        }
    }

    pub fn duration_us(&self) -> u64 {
        self.actuation_duration_us.unwrap_or_else(|| self.kind.default_duration_us())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Device {
    pub spec: DeviceSpec,
    pub state: String,
    pub completed: u64,
}

/// Inbox command payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommandBody {
    Actuate {
        device: String,
        action: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    /// Analyze locally held data of the given size.
    Analyze {
        request_bytes: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl CommandBody {
    pub fn actuate(device: &str, action: &str) -> Self {
        CommandBody::Actuate {
            device: device.into(),
            action: action.into(),
            note: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("command serializes")
    }

    pub fn parse(bytes: &[u8]) -> Option<Self> {
        serde_json::from_slice(bytes).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub actor: AgentId,
    /// Claimed issuer, absent for anonymous commands.
    pub issued_by: Option<AgentId>,
    pub correlation_id: Option<CorrelationId>,
    pub device: String,
    pub action: String,
    pub started_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditBody {
    Actuation(AuditRecord),
    BoundaryCrossing(BoundaryMarker),
}

impl AuditBody {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("audit serializes")
    }

    pub fn parse(bytes: &[u8]) -> Option<Self> {
        serde_json::from_slice(bytes).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusBody {
    pub ok: bool,
    pub code: u16,
    pub detail: String,
    pub correlation_id: Option<CorrelationId>,
}

impl StatusBody {
    pub fn parse(bytes: &[u8]) -> Option<Self> {
        serde_json::from_slice(bytes).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatBody {
    pub role: Role,
    pub seq: u64,
}

/// Shared context as it travels in `state_ref` messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShareBody {
    Embedded { doc: String, content: String },
    Reference(StateRef),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DocView {
    Embedded(String),
    Reference(StateRef),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reaction {
    Publish {
        topic: Topic,
        envelope: Envelope,
        /// Journaled and sent after reconnect instead of being dropped.
        durable: bool,
    },
    CompleteAt {
        at_us: u64,
        device: String,
        correlation_id: Option<CorrelationId>,
        action: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Execution {
    pub device: String,
    pub action: String,
    pub correlation_id: Option<CorrelationId>,
    pub issued_by: Option<AgentId>,
    pub started_us: u64,
    pub completed_us: Option<u64>,
    /// False when the command bypassed the agent via the device topic.
    pub audited: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EchoSample {
    pub correlation_id: CorrelationId,
    pub sent_us: u64,
    pub rtt_us: u64,
}

/// An inbox command the orchestrator acted on, with the command it issued.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Obeyed {
    pub received: Option<CorrelationId>,
    pub issued: CorrelationId,
    pub time_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "route", rename_all = "snake_case")]
pub enum InferenceRoute {
    Local,
    Cloud { host: String, address: String },
    Denied,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InferenceOutcome {
    pub call: CorrelationId,
    pub request_bytes: u64,
    pub route: InferenceRoute,
    pub code: u16,
    /// The local endpoint was tried and answered with a cancellation.
    pub local_cancelled: bool,
    pub marker: Option<BoundaryMarker>,
}

/// World services an inference call may touch.
pub struct InferenceCtx<'a> {
    pub policy: &'a BoundaryPolicy,
    pub ledger: &'a mut EgressLedger,
    pub dns: &'a mut DnsLog,
    pub hosts: &'a BTreeMap<String, Vec<String>>,
    pub dns_queries_per_call: u32,
}

/// One inference request through `spec`'s chain.
pub fn run_inference(
    spec: &AgentSpec,
    request_bytes: u64,
    label: Option<&str>,
    call: CorrelationId,
    now_us: u64,
    ctx: &mut InferenceCtx<'_>,
) -> InferenceOutcome {
    let outcome = |route, code, local_cancelled, marker| InferenceOutcome {
        call,
        request_bytes,
        route,
        code,
        local_cancelled,
        marker,
    };
    let Some(chain) = &spec.inference else {
        return outcome(InferenceRoute::Failed, STATUS_UNAVAILABLE, false, None);
    };
    if chain.local.is_some() && request_bytes <= chain.context_capacity_bytes {
        return outcome(InferenceRoute::Local, STATUS_OK, false, None);
    }
    let local_cancelled = chain.local.is_some();
    let Some(host) = &chain.cloud else {
        let code = if local_cancelled { STATUS_CANCELLED } else { STATUS_UNAVAILABLE };
        return outcome(InferenceRoute::Failed, code, local_cancelled, None);
    };
    let decision = authorize_egress(ctx.policy, &spec.id, host, label, request_bytes);
    if decision == EgressDecision::Deny {
        return outcome(InferenceRoute::Denied, STATUS_FORBIDDEN, local_cancelled, None);
    }
    let addresses = ctx.hosts.get(host).filter(|a| !a.is_empty());
    let Some(addresses) = addresses else {
        return outcome(InferenceRoute::Failed, STATUS_UNAVAILABLE, local_cancelled, None);
    };
    let prior = ctx.ledger.entries().iter().filter(|e| &e.destination == host).count();
    let address = addresses[prior % addresses.len()].clone();
    for _ in 0..ctx.dns_queries_per_call.max(1) {
        ctx.dns.push(DnsEvent {
            timestamp_us: now_us,
            agent: spec.id.clone(),
            hostname: host.clone(),
            address: address.clone(),
            call,
        });
    }
    let cause = if local_cancelled {
        EgressCause::InferenceFallback
    } else {
        EgressCause::CloudApi
    };
    ctx.ledger
        .append(EgressEntry {
            timestamp_us: now_us,
            source: spec.id.clone(),
            destination: host.clone(),
            address: address.clone(),
            bytes: request_bytes.max(1),
            cause,
            call,
        })
        .expect("non-empty egress");
    let marker = (decision == EgressDecision::AllowMarked).then(|| BoundaryMarker {
        call,
        agent: spec.id.clone(),
        destination: host.clone(),
        bytes: request_bytes.max(1),
        cause,
    });
    outcome(
        InferenceRoute::Cloud {
            host: host.clone(),
            address,
        },
        STATUS_OK,
        local_cancelled,
        marker,
    )
}

/// Per-delivery context handed to [`Agent::handle_inbox`].
pub struct Ctx<'a> {
    pub now_us: u64,
    pub rng: &'a mut dyn RngCore,
    pub verification: VerificationResult,
    pub inference: InferenceCtx<'a>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub spec: AgentSpec,
    /// Bridge the orchestrator forwards actuations to.
    pub bridge: Option<AgentId>,
    pub devices: BTreeMap<String, Device>,
    pub executions: Vec<Execution>,
    pub trust: Option<TrustState>,
    pending_probes: BTreeMap<CorrelationId, u64>,
    pub echo_samples: Vec<EchoSample>,
    pub unmatched_replies: u64,
    heartbeat_seq: u64,
    pub heartbeats_seen: BTreeMap<AgentId, u64>,
    pub docs: BTreeMap<String, DocView>,
    pub inferences: Vec<InferenceOutcome>,
    pub statuses: Vec<(u64, StatusBody)>,
    pub obeyed: Vec<Obeyed>,
    pub ignored: u64,
    pub malformed: u64,
}

impl Agent {
    pub fn new(spec: AgentSpec) -> Self {
        Self {
            spec,
            bridge: None,
            devices: BTreeMap::new(),
            executions: Vec::new(),
            trust: None,
            pending_probes: BTreeMap::new(),
            echo_samples: Vec::new(),
            unmatched_replies: 0,
            heartbeat_seq: 0,
            heartbeats_seen: BTreeMap::new(),
            docs: BTreeMap::new(),
            inferences: Vec::new(),
            statuses: Vec::new(),
            obeyed: Vec::new(),
            ignored: 0,
            malformed: 0,
        }
    }

    pub fn id(&self) -> &AgentId {
        &self.spec.id
    }

    pub fn role(&self) -> Role {
        self.spec.role
    }

    pub fn add_device(&mut self, spec: DeviceSpec) {
        self.devices.insert(
            spec.id.clone(),
            Device {
                spec,
                state: "idle".into(),
                completed: 0,
            },
        );
    }

    fn envelope(&self, msg_type: MsgType, now_us: u64, correlation: CorrelationId, payload: Vec<u8>) -> Envelope {
        Envelope::new(self.spec.id.clone(), msg_type, now_us, correlation, payload)
    }

    pub fn heartbeat(&mut self, now_us: u64, rng: &mut dyn RngCore) -> Reaction {
        let body = HeartbeatBody {
            role: self.spec.role,
            seq: self.heartbeat_seq,
        };
        self.heartbeat_seq += 1;
        Reaction::Publish {
            topic: Topic::broadcast(),
            envelope: self.envelope(
                MsgType::Heartbeat,
                now_us,
                CorrelationId::random(rng),
                serde_json::to_vec(&body).expect("heartbeat serializes"),
            ),
            durable: false,
        }
    }

    pub fn send_probe(&mut self, target: &AgentId, payload_size: usize, now_us: u64, rng: &mut dyn RngCore) -> (CorrelationId, Reaction) {
        let c = CorrelationId::random(rng);
        self.pending_probes.insert(c, now_us);
        let reaction = Reaction::Publish {
            topic: Topic::inbox(target.as_str()),
            envelope: self.envelope(MsgType::EchoProbe, now_us, c, vec![b'x'; payload_size]),
            durable: false,
        };
        (c, reaction)
    }

    pub fn abandon_probe(&mut self, c: CorrelationId) -> bool {
        self.pending_probes.remove(&c).is_some()
    }

    /// Sends a command to `target`'s inbox.
    pub fn command(&self, target: &AgentId, body: &CommandBody, now_us: u64, rng: &mut dyn RngCore) -> (CorrelationId, Reaction) {
        let c = CorrelationId::random(rng);
        let reaction = Reaction::Publish {
            topic: Topic::inbox(target.as_str()),
            envelope: self.envelope(MsgType::Command, now_us, c, body.to_bytes()),
            durable: false,
        };
        (c, reaction)
    }

    pub fn share(&self, target: &Topic, body: &ShareBody, now_us: u64, rng: &mut dyn RngCore) -> Reaction {
        Reaction::Publish {
            topic: target.clone(),
            envelope: self.envelope(
                MsgType::StateRef,
                now_us,
                CorrelationId::random(rng),
                serde_json::to_vec(body).expect("share serializes"),
            ),
            durable: false,
        }
    }

    pub fn status(&self, to: &AgentId, body: &StatusBody, now_us: u64, rng: &mut dyn RngCore) -> Reaction {
        Reaction::Publish {
            topic: Topic::inbox(to.as_str()),
            envelope: self.envelope(
                MsgType::Status,
                now_us,
                CorrelationId::random(rng),
                serde_json::to_vec(body).expect("status serializes"),
            ),
            durable: false,
        }
    }

    /// Applies a finished actuation to device state.
    pub fn complete(&mut self, device: &str, correlation: Option<CorrelationId>, action: &str, now_us: u64) {
        if let Some(d) = self.devices.get_mut(device) {
            d.state = action.to_string();
            d.completed += 1;
        }
        if let Some(e) = self
            .executions
            .iter_mut()
            .find(|e| e.device == device && e.correlation_id == correlation && e.completed_us.is_none())
        {
            e.completed_us = Some(now_us);
        }
    }

    pub fn handle_inbox(&mut self, topic: &Topic, env: Envelope, ctx: &mut Ctx<'_>) -> Vec<Reaction> {
        if topic.starts_with(ACTUATE_PREFIX) {
            return self.handle_direct_actuation(topic, env, ctx);
        }
        match env.msg_type {
            MsgType::EchoProbe => match &env.sender {
                Some(sender) => {
                    let reply = Envelope {
                        sender: Some(self.spec.id.clone()),
                        msg_type: MsgType::EchoReply,
                        timestamp_us: env.timestamp_us,
                        correlation_id: env.correlation_id,
                        payload: env.payload,
                    };
                    vec![Reaction::Publish {
                        topic: Topic::inbox(sender.as_str()),
                        envelope: reply,
                        durable: false,
                    }]
                }
                None => {
                    self.ignored += 1;
                    vec![]
                }
            },
            MsgType::EchoReply => {
                let sent = env.correlation_id.and_then(|c| self.pending_probes.remove(&c).map(|s| (c, s)));
                match sent {
                    Some((c, sent_us)) => self.echo_samples.push(EchoSample {
                        correlation_id: c,
                        sent_us,
                        rtt_us: ctx.now_us - sent_us,
                    }),
                    None => self.unmatched_replies += 1,
                }
                vec![]
            }
            MsgType::Heartbeat => {
                if let Some(sender) = &env.sender {
                    self.heartbeats_seen.insert(sender.clone(), env.timestamp_us);
                    if let Some(t) = &mut self.trust {
                        t.observe_heartbeat(sender, env.timestamp_us);
                    }
                }
                vec![]
            }
            MsgType::Command => self.handle_command(env, ctx),
            MsgType::Status => {
                match StatusBody::parse(&env.payload) {
                    Some(s) => self.statuses.push((ctx.now_us, s)),
                    None => self.malformed += 1,
                }
                vec![]
            }
            MsgType::StateRef => {
                match serde_json::from_slice::<ShareBody>(&env.payload) {
                    Ok(ShareBody::Embedded { doc, content }) => {
                        self.docs.insert(doc, DocView::Embedded(content));
                    }
                    Ok(ShareBody::Reference(r)) => {
                        self.docs.insert(r.path.clone(), DocView::Reference(r));
                    }
                    Err(_) => self.malformed += 1,
                }
                vec![]
            }
            MsgType::Audit => {
                self.ignored += 1;
                vec![]
            }
        }
    }

    fn handle_command(&mut self, env: Envelope, ctx: &mut Ctx<'_>) -> Vec<Reaction> {
        let Some(body) = CommandBody::parse(&env.payload) else {
            self.malformed += 1;
            return vec![];
        };
        match self.spec.role {
            Role::Bridge => self.actuate(&env, &body, ctx.now_us, true, ctx.rng),
            Role::Orchestrator => {
                if let Some(trust) = &mut self.trust {
                    if trust.assess(&env, &ctx.verification, ctx.now_us) != Assessment::Accept {
                        return vec![];
                    }
                }
                let (CommandBody::Actuate { device, action, .. }, Some(bridge)) = (&body, self.bridge.clone()) else {
                    self.ignored += 1;
                    return vec![];
                };
                let (issued, reaction) = self.command(&bridge, &CommandBody::actuate(device, action), ctx.now_us, ctx.rng);
                self.obeyed.push(Obeyed {
                    received: env.correlation_id,
                    issued,
                    time_us: ctx.now_us,
                });
                vec![reaction]
            }
            Role::Mobile => {
                let CommandBody::Analyze { request_bytes, label } = body else {
                    self.ignored += 1;
                    return vec![];
                };
                let call = env.correlation_id.unwrap_or_else(|| CorrelationId::random(ctx.rng));
                let outcome = run_inference(&self.spec, request_bytes, label.as_deref(), call, ctx.now_us, &mut ctx.inference);
                let mut out = Vec::new();
                if let Some(marker) = &outcome.marker {
                    out.push(Reaction::Publish {
                        topic: Topic::audit(),
                        envelope: self.envelope(
                            MsgType::Audit,
                            ctx.now_us,
                            call,
                            AuditBody::BoundaryCrossing(marker.clone()).to_bytes(),
                        ),
                        durable: true,
                    });
                }
                if let Some(sender) = &env.sender {
                    let (ok, detail) = match &outcome.route {
                        InferenceRoute::Local | InferenceRoute::Cloud { .. } => (true, "done"),
                        InferenceRoute::Denied => (false, "sovereignty_denied"),
                        InferenceRoute::Failed => (false, "inference_failed"),
                    };
                    let status = StatusBody {
                        ok,
                        code: outcome.code,
                        detail: detail.into(),
                        correlation_id: Some(call),
                    };
                    out.push(self.status(sender, &status, ctx.now_us, ctx.rng));
                }
                self.inferences.push(outcome);
                out
            }
        }
    }

    fn handle_direct_actuation(&mut self, topic: &Topic, env: Envelope, ctx: &mut Ctx<'_>) -> Vec<Reaction> {
        if self.spec.role != Role::Bridge {
            self.ignored += 1;
            return vec![];
        }
        match CommandBody::parse(&env.payload) {
            Some(CommandBody::Actuate { device, action, .. }) if device == topic.leaf() => {
                let body = CommandBody::actuate(&device, &action);
                self.actuate(&env, &body, ctx.now_us, false, ctx.rng)
            }
            Some(_) => {
                self.ignored += 1;
                vec![]
            }
            None => {
                self.malformed += 1;
                vec![]
            }
        }
    }

    /// Starts an actuation. The audit record goes out at execution start so a
    /// monitor can see it before the device finishes moving.
    fn actuate(&mut self, env: &Envelope, body: &CommandBody, now_us: u64, audit: bool, rng: &mut dyn RngCore) -> Vec<Reaction> {
        let CommandBody::Actuate { device, action, .. } = body else {
            self.ignored += 1;
            return vec![];
        };
        let Some(d) = self.devices.get(device) else {
            return match (&env.sender, audit) {
                (Some(sender), true) => {
                    let status = StatusBody {
                        ok: false,
                        code: STATUS_NOT_FOUND,
                        detail: format!("unknown device {device}"),
                        correlation_id: env.correlation_id,
                    };
                    vec![self.status(sender, &status, now_us, rng)]
                }
                _ => {
                    self.ignored += 1;
                    vec![]
                }
            };
        };
        let complete_at = now_us + d.spec.duration_us();
        self.executions.push(Execution {
            device: device.clone(),
            action: action.clone(),
            correlation_id: env.correlation_id,
            issued_by: env.sender.clone(),
            started_us: now_us,
            completed_us: None,
            audited: audit,
        });
        let mut out = vec![Reaction::CompleteAt {
            at_us: complete_at,
            device: device.clone(),
            correlation_id: env.correlation_id,
            action: action.clone(),
        }];
        if audit {
            let record = AuditRecord {
                actor: self.spec.id.clone(),
                issued_by: env.sender.clone(),
                correlation_id: env.correlation_id,
                device: device.clone(),
                action: action.clone(),
                started_us: now_us,
            };
            out.push(Reaction::Publish {
                topic: Topic::audit(),
                envelope: Envelope {
                    sender: Some(self.spec.id.clone()),
                    msg_type: MsgType::Audit,
                    timestamp_us: now_us,
                    correlation_id: env.correlation_id,
                    payload: AuditBody::Actuation(record).to_bytes(),
                },
                durable: true,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::RejectionReason;
    use crate::sovereignty::CloudFallback;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    struct Fixture {
        rng: ChaCha8Rng,
        policy: BoundaryPolicy,
        ledger: EgressLedger,
        dns: DnsLog,
        hosts: BTreeMap<String, Vec<String>>,
    }

    impl Fixture {
        fn new(fallback: CloudFallback) -> Self {
            Self {
                rng: ChaCha8Rng::seed_from_u64(1),
                policy: BoundaryPolicy::new(fallback),
                ledger: EgressLedger::new(),
                dns: DnsLog::new(),
                hosts: BTreeMap::from([("api.anthropic.com".to_string(), vec!["160.79.104.10".to_string()])]),
            }
        }

        fn ctx(&mut self, now_us: u64) -> Ctx<'_> {
            Ctx {
                now_us,
                rng: &mut self.rng,
                verification: VerificationResult::Rejected(RejectionReason::MissingAuth),
                inference: InferenceCtx {
                    policy: &self.policy,
                    ledger: &mut self.ledger,
                    dns: &mut self.dns,
                    hosts: &self.hosts,
                    dns_queries_per_call: DEFAULT_DNS_QUERIES_PER_CALL,
                },
            }
        }
    }

    fn bridge() -> Agent {
        let mut a = Agent::new(AgentSpec::new("jeeves", Role::Bridge));
        a.add_device(DeviceSpec::new("front_door", DeviceKind::Lock));
        a
    }

    fn percy() -> Agent {
        Agent::new(AgentSpec::new("percy", Role::Mobile).with_inference(InferenceChain {
            cloud: Some("api.anthropic.com".into()),
            ..InferenceChain::default()
        }))
    }

    fn cmd(sender: Option<&str>, body: CommandBody) -> Envelope {
        Envelope {
            sender: sender.map(id),
            msg_type: MsgType::Command,
            timestamp_us: 0,
            correlation_id: Some(CorrelationId(42)),
            payload: body.to_bytes(),
        }
    }

    #[test]
    fn echo_reply_keeps_correlation_and_timestamp() {
        let mut f = Fixture::new(CloudFallback::AllowSilent);
        let mut p = percy();
        let probe = Envelope::new(id("rupert"), MsgType::EchoProbe, 17, CorrelationId(9), vec![1; 50]);
        let r = p.handle_inbox(&Topic::inbox("percy"), probe, &mut f.ctx(30));
        let [Reaction::Publish { topic, envelope, .. }] = &r[..] else { panic!("{r:?}") };
        assert_eq!(topic, &Topic::inbox("rupert"));
        assert_eq!(envelope.msg_type, MsgType::EchoReply);
        assert_eq!(envelope.correlation_id, Some(CorrelationId(9)));
        assert_eq!(envelope.timestamp_us, 17);
    }

    #[test]
    fn lock_command_audits_at_start_and_completes_later() {
        let mut f = Fixture::new(CloudFallback::AllowSilent);
        let mut j = bridge();
        let r = j.handle_inbox(&Topic::inbox("jeeves"), cmd(Some("rupert"), CommandBody::actuate("front_door", "lock")), &mut f.ctx(1_000));
        assert!(matches!(r[0], Reaction::CompleteAt { at_us: 501_000, .. }));
        let Reaction::Publish { topic, envelope, durable } = &r[1] else { panic!() };
        assert_eq!(topic, &Topic::audit());
        assert!(*durable);
        let Some(AuditBody::Actuation(rec)) = AuditBody::parse(&envelope.payload) else { panic!() };
        assert_eq!((rec.correlation_id, rec.started_us), (Some(CorrelationId(42)), 1_000));
        assert_eq!(j.devices["front_door"].state, "idle");
        j.complete("front_door", Some(CorrelationId(42)), "lock", 501_000);
        assert_eq!(j.devices["front_door"].state, "lock");
        assert_eq!(j.executions[0].completed_us, Some(501_000));
    }

    #[test]
    fn unknown_device_yields_error_status() {
        let mut f = Fixture::new(CloudFallback::AllowSilent);
        let mut j = bridge();
        let r = j.handle_inbox(&Topic::inbox("jeeves"), cmd(Some("rupert"), CommandBody::actuate("garage", "open")), &mut f.ctx(0));
        let [Reaction::Publish { envelope, .. }] = &r[..] else { panic!() };
        let s = StatusBody::parse(&envelope.payload).unwrap();
        assert!(!s.ok);
        assert_eq!(s.code, STATUS_NOT_FOUND);
        assert!(j.executions.is_empty());
    }

    #[test]
    fn direct_actuation_skips_audit() {
        let mut f = Fixture::new(CloudFallback::AllowSilent);
        let mut j = bridge();
        let r = j.handle_inbox(&Topic::actuate("front_door"), cmd(Some("mallory"), CommandBody::actuate("front_door", "unlock")), &mut f.ctx(0));
        assert_eq!(r.len(), 1);
        assert!(!j.executions[0].audited);
    }

    #[test]
    fn oversized_request_falls_back_silently() {
        let mut f = Fixture::new(CloudFallback::AllowSilent);
        let mut p = percy();
        let r = p.handle_inbox(
            &Topic::inbox("percy"),
            cmd(Some("rupert"), CommandBody::Analyze { request_bytes: 109 * 1024, label: None }),
            &mut f.ctx(0),
        );
        assert_eq!(r.len(), 1, "only the status reply");
        let Reaction::Publish { envelope, .. } = &r[0] else { panic!() };
        assert!(StatusBody::parse(&envelope.payload).unwrap().ok);
        assert!(p.inferences[0].local_cancelled);
        assert_eq!(f.ledger.len(), 1);
        assert_eq!(f.ledger.entries()[0].bytes, 109 * 1024);
        assert_eq!(f.dns.len(), 10);
    }

    #[test]
    fn marker_policy_emits_audit_marker() {
        let mut f = Fixture::new(CloudFallback::AllowWithMarker);
        let mut p = percy();
        let r = p.handle_inbox(
            &Topic::inbox("percy"),
            cmd(Some("rupert"), CommandBody::Analyze { request_bytes: 109 * 1024, label: None }),
            &mut f.ctx(0),
        );
        let Reaction::Publish { topic, envelope, .. } = &r[0] else { panic!() };
        assert_eq!(topic, &Topic::audit());
        assert!(matches!(AuditBody::parse(&envelope.payload), Some(AuditBody::BoundaryCrossing(_))));
    }

    #[test]
    fn forbid_policy_denies() {
        let mut f = Fixture::new(CloudFallback::Forbid);
        let mut p = percy();
        let r = p.handle_inbox(
            &Topic::inbox("percy"),
            cmd(Some("rupert"), CommandBody::Analyze { request_bytes: 109 * 1024, label: None }),
            &mut f.ctx(0),
        );
        let Reaction::Publish { envelope, .. } = &r[0] else { panic!() };
        let s = StatusBody::parse(&envelope.payload).unwrap();
        assert_eq!(s.detail, "sovereignty_denied");
        assert!(f.ledger.is_empty() && f.dns.is_empty());
    }

    #[test]
    fn small_request_stays_local() {
        let mut f = Fixture::new(CloudFallback::AllowSilent);
        let mut ctx = f.ctx(0);
        let o = run_inference(&percy().spec, 1024, None, CorrelationId(1), 0, &mut ctx.inference);
        assert_eq!(o.route, InferenceRoute::Local);
        assert!(f.ledger.is_empty());
    }

    #[test]
    fn cloud_only_chain_has_no_local_attempt() {
        let mut f = Fixture::new(CloudFallback::AllowSilent);
        let spec = AgentSpec::new("cloudy", Role::Mobile).with_inference(InferenceChain {
            local: None,
            cloud: Some("api.anthropic.com".into()),
            ..InferenceChain::default()
        });
        let mut ctx = f.ctx(0);
        let o = run_inference(&spec, 10, None, CorrelationId(1), 0, &mut ctx.inference);
        assert!(!o.local_cancelled);
        assert_eq!(f.ledger.entries()[0].cause, EgressCause::CloudApi);
    }

    #[test]
    fn echo_samples_and_unmatched_replies() {
        let mut f = Fixture::new(CloudFallback::AllowSilent);
        let mut r = Agent::new(AgentSpec::new("rupert", Role::Orchestrator));
        let (c, _) = r.send_probe(&id("percy"), 50, 100, &mut f.rng);
        let reply = Envelope::new(id("percy"), MsgType::EchoReply, 100, c, vec![]);
        r.handle_inbox(&Topic::inbox("rupert"), reply.clone(), &mut f.ctx(23_700));
        r.handle_inbox(&Topic::inbox("rupert"), reply, &mut f.ctx(23_800));
        assert_eq!(r.echo_samples[0].rtt_us, 23_600);
        assert_eq!(r.unmatched_replies, 1);
    }
}
