//! In-process pub/sub broker with MQTT-style topics and a supervision mirror.
//!
//! Delivery is at-most-once. In [`Posture::Baseline`] every publish is
//! accepted, reproducing a broker with no application-level enforcement. In
//! [`Posture::Hardened`] a publish must pass the ACL, strict decoding and
//! envelope verification; rejections are silent to the publisher and only
//! show up in the [`DeliveryRecord`].

mod acl;
mod topic;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use acl::{Acl, AclAction, AclRule};
pub use topic::{topic_matches, Topic, TopicFilter};
pub use topic::{ACTUATE_PREFIX, AUDIT, BROADCAST, INBOX_PREFIX, MIRROR, SENSOR_PREFIX};

use crate::envelope::{
    verify_envelope, AgentId, Codec, DecodeMode, EnvelopeError, Keystore, RejectionReason,
    ReplayState,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BrokerError {
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("invalid topic filter {0:?}")]
    InvalidFilter(String),
    #[error("acl line {line}: {message}")]
    AclParse { line: usize, message: String },
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("hardened posture requires a non-empty keystore")]
    EmptyKeystore,
    #[error("malformed mirror wrapper: {0}")]
    MirrorWrapper(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId(pub u32);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubscriptionId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Posture {
    #[default]
    Baseline,
    Hardened,
}

impl fmt::Display for Posture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Posture::Baseline => "baseline",
            Posture::Hardened => "hardened",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BrokerPolicy {
    pub mode: Posture,
    pub acl: Acl,
    pub keystore: Keystore,
    pub replay: ReplayState,
    pub mirror_topic: Topic,
    pub codec: Codec,
}

impl BrokerPolicy {
    pub fn baseline() -> Self {
        Self {
            mode: Posture::Baseline,
            acl: Acl::default(),
            keystore: Keystore::new(),
            replay: ReplayState::new(),
            mirror_topic: Topic::mirror(),
            codec: Codec::default(),
        }
    }

    pub fn hardened(acl: Acl, keystore: Keystore) -> Result<Self, BrokerError> {
        if keystore.is_empty() {
            return Err(BrokerError::EmptyKeystore);
        }
        Ok(Self {
            mode: Posture::Hardened,
            acl,
            keystore,
            ..Self::baseline()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum PublishRejection {
    NotConnected,
    AclDenied,
    Malformed(String),
    MissingField(String),
    Verification(RejectionReason),
}

impl PublishRejection {
    pub fn label(&self) -> String {
        match self {
            PublishRejection::NotConnected => "not_connected".into(),
            PublishRejection::AclDenied => "acl_denied".into(),
            PublishRejection::Malformed(_) => "malformed".into(),
            PublishRejection::MissingField(f) => format!("missing_field({f})"),
            PublishRejection::Verification(r) => r.as_str().into(),
        }
    }
}

impl fmt::Display for PublishRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "reason")]
pub enum Verdict {
    Accepted,
    Rejected(PublishRejection),
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }

    pub fn label(&self) -> String {
        match self {
            Verdict::Accepted => "accepted".into(),
            Verdict::Rejected(r) => format!("rejected({r})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub session: SessionId,
    pub subscription: SubscriptionId,
    /// Topic as seen by the subscriber (the mirror topic for mirror copies).
    pub topic: Topic,
    pub bytes: Vec<u8>,
    pub mirror: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub seq: u64,
    pub topic: Topic,
    pub session: SessionId,
    pub principal: AgentId,
    pub verdict: Verdict,
    pub deliveries: Vec<Delivery>,
    /// Parked subscribers that would have matched.
    pub missed: Vec<SessionId>,
    pub broker_timestamp_us: u64,
}

/// Byte-free summary of a [`DeliveryRecord`], one line in the broker event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerLogEntry {
    pub seq: u64,
    pub time_us: u64,
    pub session: SessionId,
    pub principal: AgentId,
    pub topic: Topic,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub bytes: usize,
    pub delivered: Vec<SessionId>,
    pub mirrored: Vec<SessionId>,
    pub missed: Vec<SessionId>,
}

/// Copy of an accepted publish as delivered on the mirror topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MirrorWrapper {
    pub topic: Topic,
    pub broker_timestamp_us: u64,
    pub message: Vec<u8>,
}

impl MirrorWrapper {
    pub fn encode(&self) -> Vec<u8> {
        let mut m = Map::new();
        m.insert("broker_timestamp_us".into(), Value::from(self.broker_timestamp_us));
        m.insert("message".into(), Value::from(hex::encode(&self.message)));
        m.insert("topic".into(), Value::from(self.topic.as_str()));
        serde_json::to_vec(&Value::Object(m)).expect("json map serializes")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BrokerError> {
        let err = |m: &str| BrokerError::MirrorWrapper(m.to_string());
        let v: Value = serde_json::from_slice(bytes).map_err(|e| err(&e.to_string()))?;
        let topic = v["topic"].as_str().ok_or_else(|| err("topic"))?;
        let ts = v["broker_timestamp_us"].as_u64().ok_or_else(|| err("broker_timestamp_us"))?;
        let message = v["message"].as_str().ok_or_else(|| err("message"))?;
        Ok(Self {
            topic: Topic::new(topic)?,
            broker_timestamp_us: ts,
            message: hex::decode(message).map_err(|e| err(&e.to_string()))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Connected,
    Parked,
}

#[derive(Debug, Clone)]
struct Session {
    principal: AgentId,
    state: SessionState,
}

#[derive(Debug, Clone)]
struct Subscription {
    id: SubscriptionId,
    session: SessionId,
    filter: TopicFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubscribeOutcome {
    Granted(SubscriptionId),
    Denied,
}

impl SubscribeOutcome {
    pub fn granted(self) -> Option<SubscriptionId> {
        match self {
            SubscribeOutcome::Granted(id) => Some(id),
            SubscribeOutcome::Denied => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Broker {
    sessions: BTreeMap<SessionId, Session>,
    subscriptions: Vec<Subscription>,
    next_session: u32,
    next_subscription: u32,
    next_seq: u64,
    log: Vec<BrokerLogEntry>,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a pre-authenticated session for `principal`.
    pub fn connect(&mut self, principal: AgentId) -> SessionId {
        let id = SessionId(self.next_session);
        self.next_session += 1;
        self.sessions.insert(
            id,
            Session {
                principal,
                state: SessionState::Connected,
            },
        );
        id
    }

    pub fn principal(&self, session: SessionId) -> Option<&AgentId> {
        self.sessions.get(&session).map(|s| &s.principal)
    }

    pub fn session_state(&self, session: SessionId) -> Option<SessionState> {
        self.sessions.get(&session).map(|s| s.state)
    }

    /// Parks the session; its subscriptions stay registered but receive nothing.
    pub fn disconnect(&mut self, session: SessionId) -> Result<(), BrokerError> {
        let s = self
            .sessions
            .get_mut(&session)
            .ok_or(BrokerError::UnknownSession(session))?;
        s.state = SessionState::Parked;
        Ok(())
    }

    /// Restores a parked session with its previous subscription set.
    pub fn reconnect(&mut self, session: SessionId) -> Result<(), BrokerError> {
        let s = self
            .sessions
            .get_mut(&session)
            .ok_or(BrokerError::UnknownSession(session))?;
        s.state = SessionState::Connected;
        Ok(())
    }

    pub fn subscriptions_of(&self, session: SessionId) -> Vec<(SubscriptionId, &TopicFilter)> {
        self.subscriptions
            .iter()
            .filter(|s| s.session == session)
            .map(|s| (s.id, &s.filter))
            .collect()
    }

    pub fn subscribe(
        &mut self,
        session: SessionId,
        filter: TopicFilter,
        policy: &BrokerPolicy,
    ) -> SubscribeOutcome {
        let Some(sess) = self.sessions.get(&session) else {
            return SubscribeOutcome::Denied;
        };
        if sess.state != SessionState::Connected {
            return SubscribeOutcome::Denied;
        }
        if policy.mode == Posture::Hardened && !policy.acl.allows_subscribe(&sess.principal, &filter) {
            return SubscribeOutcome::Denied;
        }
        if let Some(existing) = self
            .subscriptions
            .iter()
            .find(|s| s.session == session && s.filter == filter)
        {
            return SubscribeOutcome::Granted(existing.id);
        }
        let id = SubscriptionId(self.next_subscription);
        self.next_subscription += 1;
        self.subscriptions.push(Subscription { id, session, filter });
        SubscribeOutcome::Granted(id)
    }

    fn admit(&self, principal: &AgentId, topic: &Topic, bytes: &[u8], policy: &mut BrokerPolicy) -> Verdict {
        if policy.mode == Posture::Baseline {
            return Verdict::Accepted;
        }
        if !policy.acl.allows_publish(principal, topic) {
            return Verdict::Rejected(PublishRejection::AclDenied);
        }
        let (env, auth) = match policy.codec.decode(bytes, DecodeMode::Strict) {
            Ok(v) => v,
            Err(EnvelopeError::MissingField(f)) => {
                return Verdict::Rejected(PublishRejection::MissingField(f.to_string()))
            }
            Err(e) => return Verdict::Rejected(PublishRejection::Malformed(e.to_string())),
        };
        match verify_envelope(&env, auth.as_ref(), &policy.keystore, &mut policy.replay) {
            crate::envelope::VerificationResult::Verified => Verdict::Accepted,
            crate::envelope::VerificationResult::Rejected(r) => {
                Verdict::Rejected(PublishRejection::Verification(r))
            }
        }
    }

    /// Routes one publish. Accepted messages fan out to matching connected
    /// subscribers (one delivery per session) and, wrapped, to mirror subscribers.
    pub fn publish(
        &mut self,
        session: SessionId,
        topic: &Topic,
        bytes: &[u8],
        policy: &mut BrokerPolicy,
        now_us: u64,
    ) -> DeliveryRecord {
        let seq = self.next_seq;
        self.next_seq += 1;
        let (principal, connected) = match self.sessions.get(&session) {
            Some(s) => (s.principal.clone(), s.state == SessionState::Connected),
            None => (AgentId::new("unknown").expect("valid id"), false),
        };
        let verdict = if connected {
            self.admit(&principal, topic, bytes, policy)
        } else {
            Verdict::Rejected(PublishRejection::NotConnected)
        };

        let mut deliveries = Vec::new();
        let mut missed = Vec::new();
        if verdict.is_accepted() {
            let wrapper = MirrorWrapper {
                topic: topic.clone(),
                broker_timestamp_us: now_us,
                message: bytes.to_vec(),
            }
            .encode();
            for (target, body, is_mirror) in [(topic, bytes, false), (&policy.mirror_topic, &wrapper[..], true)] {
                let mut seen = Vec::new();
                for sub in &self.subscriptions {
                    if seen.contains(&sub.session) || !sub.filter.matches(target) {
                        continue;
                    }
                    seen.push(sub.session);
                    match self.sessions[&sub.session].state {
                        SessionState::Connected => deliveries.push(Delivery {
                            session: sub.session,
                            subscription: sub.id,
                            topic: target.clone(),
                            bytes: body.to_vec(),
                            mirror: is_mirror,
                        }),
                        SessionState::Parked => missed.push(sub.session),
                    }
                }
            }
        }

        let record = DeliveryRecord {
            seq,
            topic: topic.clone(),
            session,
            principal,
            verdict,
            deliveries,
            missed,
            broker_timestamp_us: now_us,
        };
        self.log.push(BrokerLogEntry {
            seq,
            time_us: now_us,
            session,
            principal: record.principal.clone(),
            topic: topic.clone(),
            verdict: record.verdict.clone(),
            bytes: bytes.len(),
            delivered: record.deliveries.iter().filter(|d| !d.mirror).map(|d| d.session).collect(),
            mirrored: record.deliveries.iter().filter(|d| d.mirror).map(|d| d.session).collect(),
            missed: record.missed.clone(),
        });
        record
    }

    pub fn log(&self) -> &[BrokerLogEntry] {
        &self.log
    }

    /// Line-delimited JSON export of the event log.
    pub fn export_log(&self) -> String {
        self.log
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
            .collect()
    }
}
