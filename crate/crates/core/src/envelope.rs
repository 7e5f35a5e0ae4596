//! Coordination message format, canonical encoding and HMAC authentication.
//!
//! The wire form is a compact JSON object with lexicographically sorted keys
//! and no insignificant whitespace. Binary fields (payload, correlation id,
//! nonce, signature) are lowercase hex; integers are decimal. The optional
//! authentication block travels as a top-level `auth` object:
//!
//! ```text
//! {"auth":{"counter":1,"key_id":"percy-k1","nonce":"<32 hex>","signature":"<64 hex>"},
//!  "correlation_id":"<32 hex>","msg_type":"heartbeat","payload":"","sender":"percy","timestamp_us":0}
//! ```
//!
//! The MAC input is the canonical encoding of the envelope *without* the auth
//! block, followed by `0x00 ‖ key_id ‖ 0x00 ‖ nonce (16 bytes BE) ‖ counter (8 bytes BE)`.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

/// Default upper bound on envelope payloads (1 MiB).
pub const DEFAULT_MAX_PAYLOAD: usize = 1 << 20;

/// Nonces remembered per sender before the counter alone guards replays.
pub const REPLAY_WINDOW: usize = 4096;

pub const SIGNATURE_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvelopeError {
    #[error("payload of {len} bytes exceeds maximum of {max}")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("invalid agent id {0:?}")]
    InvalidAgentId(String),
    #[error("cannot sign an envelope without a sender")]
    AnonymousSigner,
    #[error("key {key_id:?} is not registered for sender {sender}")]
    KeyNotRegistered { key_id: String, sender: String },
    #[error("keystore line {line}: {message}")]
    Keystore { line: usize, message: String },
    #[error("keystore io: {0}")]
    Io(String),
}

/// Short agent or principal identifier, e.g. `rupert`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Result<Self, EnvelopeError> {
        let id = id.into();
        let valid = !id.is_empty()
            && !id.contains(['/', '+', '#'])
            && !id.chars().any(|c| c.is_whitespace() || c.is_control());
        if valid {
            Ok(Self(id))
        } else {
            Err(EnvelopeError::InvalidAgentId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AgentId {
    type Error = EnvelopeError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<AgentId> for String {
    fn from(id: AgentId) -> Self {
        id.0
    }
}

impl FromStr for AgentId {
    type Err = EnvelopeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgType {
    Command,
    EchoProbe,
    EchoReply,
    Heartbeat,
    Audit,
    Status,
    StateRef,
}

impl MsgType {
    pub const ALL: [MsgType; 7] = [
        MsgType::Command,
        MsgType::EchoProbe,
        MsgType::EchoReply,
        MsgType::Heartbeat,
        MsgType::Audit,
        MsgType::Status,
        MsgType::StateRef,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::Command => "command",
            MsgType::EchoProbe => "echo_probe",
            MsgType::EchoReply => "echo_reply",
            MsgType::Heartbeat => "heartbeat",
            MsgType::Audit => "audit",
            MsgType::Status => "status",
            MsgType::StateRef => "state_ref",
        }
    }
}

impl FromStr for MsgType {
    type Err = EnvelopeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MsgType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| EnvelopeError::Malformed(format!("unknown msg_type {s:?}")))
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 128-bit correlation identifier, rendered as 32 lowercase hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CorrelationId(pub u128);

impl CorrelationId {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        Self(u128::from_be_bytes(b))
    }
}

impl fmt::Display for CorrelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl FromStr for CorrelationId {
    type Err = EnvelopeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_hex_u128(s, "correlation_id").map(CorrelationId)
    }
}

impl Serialize for CorrelationId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CorrelationId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The coordination message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    /// Absent only for anonymous (baseline-accepted) messages.
    pub sender: Option<AgentId>,
    pub msg_type: MsgType,
    /// Microseconds since scenario start.
    pub timestamp_us: u64,
    pub correlation_id: Option<CorrelationId>,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn new(
        sender: AgentId,
        msg_type: MsgType,
        timestamp_us: u64,
        correlation_id: CorrelationId,
        payload: Vec<u8>,
    ) -> Self {
        Self {
            sender: Some(sender),
            msg_type,
            timestamp_us,
            correlation_id: Some(correlation_id),
            payload,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthBlock {
    pub key_id: String,
    pub nonce: u128,
    pub counter: u64,
    pub signature: [u8; SIGNATURE_LEN],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Accepts envelopes without `sender` / `correlation_id`.
    Lenient,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    MissingAuth,
    UnknownKey,
    BadSignature,
    ReplayedNonce,
    StaleCounter,
}

impl RejectionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectionReason::MissingAuth => "missing_auth",
            RejectionReason::UnknownKey => "unknown_key",
            RejectionReason::BadSignature => "bad_signature",
            RejectionReason::ReplayedNonce => "replayed_nonce",
            RejectionReason::StaleCounter => "stale_counter",
        }
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "reason")]
pub enum VerificationResult {
    Verified,
    Rejected(RejectionReason),
}

impl VerificationResult {
    pub fn is_verified(&self) -> bool {
        matches!(self, VerificationResult::Verified)
    }

    pub fn reason(&self) -> Option<RejectionReason> {
        match self {
            VerificationResult::Verified => None,
            VerificationResult::Rejected(r) => Some(*r),
        }
    }
}

/// Encoder/decoder bound to a payload size limit.
#[derive(Debug, Clone, Copy)]
pub struct Codec {
    pub max_payload: usize,
}

impl Default for Codec {
    fn default() -> Self {
        Self {
            max_payload: DEFAULT_MAX_PAYLOAD,
        }
    }
}

impl Codec {
    pub fn new(max_payload: usize) -> Self {
        Self { max_payload }
    }

    pub fn encode(&self, env: &Envelope, auth: Option<&AuthBlock>) -> Result<Vec<u8>, EnvelopeError> {
        if env.payload.len() > self.max_payload {
            return Err(EnvelopeError::PayloadTooLarge {
                len: env.payload.len(),
                max: self.max_payload,
            });
        }
        let mut obj = envelope_fields(env);
        if let Some(auth) = auth {
            let mut a = Map::new();
            a.insert("counter".into(), Value::from(auth.counter));
            a.insert("key_id".into(), Value::from(auth.key_id.clone()));
            a.insert("nonce".into(), Value::from(format!("{:032x}", auth.nonce)));
            a.insert("signature".into(), Value::from(hex::encode(auth.signature)));
            obj.insert("auth".into(), Value::Object(a));
        }
        Ok(serde_json::to_vec(&Value::Object(obj)).expect("json map serializes"))
    }

    pub fn decode(
        &self,
        bytes: &[u8],
        mode: DecodeMode,
    ) -> Result<(Envelope, Option<AuthBlock>), EnvelopeError> {
        let value: Value = serde_json::from_slice(bytes)
            .map_err(|e| EnvelopeError::Malformed(e.to_string()))?;
        let Value::Object(mut obj) = value else {
            return Err(EnvelopeError::Malformed("envelope is not an object".into()));
        };

        let auth = obj.remove("auth").map(parse_auth).transpose()?;
        let msg_type = take_str(&mut obj, "msg_type")?
            .ok_or(EnvelopeError::MissingField("msg_type"))?
            .parse()?;
        let timestamp_us = match obj.remove("timestamp_us") {
            None => return Err(EnvelopeError::MissingField("timestamp_us")),
            Some(v) => v
                .as_u64()
                .ok_or_else(|| EnvelopeError::Malformed("timestamp_us must be a non-negative integer".into()))?,
        };
        let payload = take_str(&mut obj, "payload")?.ok_or(EnvelopeError::MissingField("payload"))?;
        let payload = hex::decode(&payload)
            .map_err(|e| EnvelopeError::Malformed(format!("payload: {e}")))?;
        if payload.len() > self.max_payload {
            return Err(EnvelopeError::PayloadTooLarge {
                len: payload.len(),
                max: self.max_payload,
            });
        }
        let sender = take_str(&mut obj, "sender")?.map(AgentId::new).transpose()?;
        let correlation_id = take_str(&mut obj, "correlation_id")?
            .map(|s| s.parse::<CorrelationId>())
            .transpose()?;

        if mode == DecodeMode::Strict {
            if sender.is_none() {
                return Err(EnvelopeError::MissingField("sender"));
            }
            if correlation_id.is_none() {
                return Err(EnvelopeError::MissingField("correlation_id"));
            }
            if let Some(k) = obj.keys().next() {
                return Err(EnvelopeError::Malformed(format!("unknown field {k:?}")));
            }
        }

        Ok((
            Envelope {
                sender,
                msg_type,
                timestamp_us,
                correlation_id,
                payload,
            },
            auth,
        ))
    }
}

fn envelope_fields(env: &Envelope) -> Map<String, Value> {
    let mut obj = Map::new();
    if let Some(c) = env.correlation_id {
        obj.insert("correlation_id".into(), Value::from(c.to_string()));
    }
    obj.insert("msg_type".into(), Value::from(env.msg_type.as_str()));
    obj.insert("payload".into(), Value::from(hex::encode(&env.payload)));
    if let Some(s) = &env.sender {
        obj.insert("sender".into(), Value::from(s.as_str()));
    }
    obj.insert("timestamp_us".into(), Value::from(env.timestamp_us));
    obj
}

fn take_str(obj: &mut Map<String, Value>, key: &'static str) -> Result<Option<String>, EnvelopeError> {
    match obj.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(EnvelopeError::Malformed(format!("{key} must be a string"))),
    }
}

fn parse_hex_u128(s: &str, what: &str) -> Result<u128, EnvelopeError> {
    if s.len() != 32 {
        return Err(EnvelopeError::Malformed(format!("{what} must be 32 hex digits")));
    }
    let mut b = [0u8; 16];
    hex::decode_to_slice(s, &mut b).map_err(|e| EnvelopeError::Malformed(format!("{what}: {e}")))?;
    Ok(u128::from_be_bytes(b))
}

fn parse_auth(v: Value) -> Result<AuthBlock, EnvelopeError> {
    let Value::Object(mut a) = v else {
        return Err(EnvelopeError::Malformed("auth is not an object".into()));
    };
    let counter = a
        .remove("counter")
        .and_then(|v| v.as_u64())
        .ok_or(EnvelopeError::MissingField("auth.counter"))?;
    let key_id = take_str(&mut a, "key_id")?.ok_or(EnvelopeError::MissingField("auth.key_id"))?;
    let nonce = take_str(&mut a, "nonce")?.ok_or(EnvelopeError::MissingField("auth.nonce"))?;
    let nonce = parse_hex_u128(&nonce, "auth.nonce")?;
    let sig = take_str(&mut a, "signature")?.ok_or(EnvelopeError::MissingField("auth.signature"))?;
    let mut signature = [0u8; SIGNATURE_LEN];
    hex::decode_to_slice(&sig, &mut signature)
        .map_err(|e| EnvelopeError::Malformed(format!("auth.signature: {e}")))?;
    Ok(AuthBlock {
        key_id,
        nonce,
        counter,
        signature,
    })
}

/// Canonical bytes of `env` (without auth). Integers as decimal text, sorted keys.
pub fn canonical_bytes(env: &Envelope) -> Vec<u8> {
    serde_json::to_vec(&Value::Object(envelope_fields(env))).expect("json map serializes")
}

pub fn encode_envelope(env: &Envelope, auth: Option<&AuthBlock>) -> Result<Vec<u8>, EnvelopeError> {
    Codec::default().encode(env, auth)
}

pub fn decode_envelope(
    bytes: &[u8],
    mode: DecodeMode,
) -> Result<(Envelope, Option<AuthBlock>), EnvelopeError> {
    Codec::default().decode(bytes, mode)
}

fn mac_input(env: &Envelope, key_id: &str, nonce: u128, counter: u64) -> Vec<u8> {
    let mut m = canonical_bytes(env);
    m.push(0);
    m.extend_from_slice(key_id.as_bytes());
    m.push(0);
    m.extend_from_slice(&nonce.to_be_bytes());
    m.extend_from_slice(&counter.to_be_bytes());
    m
}

fn new_mac(key: &[u8]) -> HmacSha256 {
    HmacSha256::new_from_slice(key).expect("HMAC accepts keys of any length")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyEntry {
    pub sender: AgentId,
    pub key: Vec<u8>,
}

/// key_id → (sender, secret) map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Keystore {
    keys: BTreeMap<String, KeyEntry>,
}

impl Keystore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key_id: impl Into<String>, sender: AgentId, key: Vec<u8>) {
        self.keys.insert(key_id.into(), KeyEntry { sender, key });
    }

    pub fn get(&self, key_id: &str) -> Option<&KeyEntry> {
        self.keys.get(key_id)
    }

    /// First key id (in key order) registered for `sender`.
    pub fn key_id_for(&self, sender: &AgentId) -> Option<&str> {
        self.keys
            .iter()
            .find(|(_, e)| &e.sender == sender)
            .map(|(k, _)| k.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &KeyEntry)> {
        self.keys.iter().map(|(k, e)| (k.as_str(), e))
    }

    /// Parses `key_id sender hexkey` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, EnvelopeError> {
        let mut ks = Keystore::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| EnvelopeError::Keystore { line: i + 1, message };
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [key_id, sender, key] = parts[..] else {
                return Err(err(format!("expected `key_id sender hexkey`, got {line:?}")));
            };
            if key_id.contains('\0') {
                return Err(err("key id contains NUL".into()));
            }
            let sender = AgentId::new(sender).map_err(|e| err(e.to_string()))?;
            let key = hex::decode(key).map_err(|e| err(format!("key: {e}")))?;
            if key.is_empty() {
                return Err(err("empty key".into()));
            }
            if ks.keys.contains_key(key_id) {
                return Err(err(format!("duplicate key id {key_id:?}")));
            }
            ks.insert(key_id, sender, key);
        }
        Ok(ks)
    }

    pub fn load(path: &Path) -> Result<Self, EnvelopeError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvelopeError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.keys
            .iter()
            .map(|(k, e)| format!("{k} {} {}\n", e.sender, hex::encode(&e.key)))
            .collect()
    }
}

/// Per-sender monotonic signing counters.
#[derive(Debug, Clone, Default)]
pub struct CounterState {
    next: BTreeMap<AgentId, u64>,
}

impl CounterState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Last counter issued for `sender` (0 if none).
    pub fn current(&self, sender: &AgentId) -> u64 {
        self.next.get(sender).copied().unwrap_or(0)
    }
}

pub fn sign_envelope<R: RngCore + ?Sized>(
    env: &Envelope,
    key_id: &str,
    keystore: &Keystore,
    nonce_source: &mut R,
    counters: &mut CounterState,
) -> Result<AuthBlock, EnvelopeError> {
    let sender = env.sender.as_ref().ok_or(EnvelopeError::AnonymousSigner)?;
    let entry = keystore
        .get(key_id)
        .filter(|e| &e.sender == sender)
        .ok_or_else(|| EnvelopeError::KeyNotRegistered {
            key_id: key_id.to_string(),
            sender: sender.to_string(),
        })?;
    let mut nb = [0u8; 16];
    nonce_source.fill_bytes(&mut nb);
    let nonce = u128::from_be_bytes(nb);
    let counter = counters.next.entry(sender.clone()).or_insert(0);
    *counter += 1;
    let counter = *counter;

    let mut mac = new_mac(&entry.key);
    mac.update(&mac_input(env, key_id, nonce, counter));
    let signature: [u8; SIGNATURE_LEN] = mac.finalize().into_bytes().into();
    Ok(AuthBlock {
        key_id: key_id.to_string(),
        nonce,
        counter,
        signature,
    })
}

#[derive(Debug, Clone, Default)]
struct SenderWindow {
    seen: HashSet<u128>,
    order: VecDeque<u128>,
    highest_counter: u64,
}

/// Seen-nonce windows and highest counters, per sender.
#[derive(Debug, Clone)]
pub struct ReplayState {
    window: usize,
    senders: BTreeMap<AgentId, SenderWindow>,
}

impl Default for ReplayState {
    fn default() -> Self {
        Self::with_window(REPLAY_WINDOW)
    }
}

impl ReplayState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_window(window: usize) -> Self {
        Self {
            window: window.max(1),
            senders: BTreeMap::new(),
        }
    }

    pub fn highest_counter(&self, sender: &AgentId) -> u64 {
        self.senders.get(sender).map_or(0, |w| w.highest_counter)
    }

    pub fn has_seen(&self, sender: &AgentId, nonce: u128) -> bool {
        self.senders.get(sender).is_some_and(|w| w.seen.contains(&nonce))
    }

    fn record(&mut self, sender: &AgentId, nonce: u128, counter: u64) {
        let w = self.senders.entry(sender.clone()).or_default();
        if w.seen.insert(nonce) {
            w.order.push_back(nonce);
        }
        while w.order.len() > self.window {
            if let Some(old) = w.order.pop_front() {
                w.seen.remove(&old);
            }
        }
        w.highest_counter = w.highest_counter.max(counter);
    }
}

/// Checks auth presence, key binding, MAC, nonce freshness and counter order,
/// in that order. `replay` is only updated on success.
pub fn verify_envelope(
    env: &Envelope,
    auth: Option<&AuthBlock>,
    keystore: &Keystore,
    replay: &mut ReplayState,
) -> VerificationResult {
    use RejectionReason::*;
    let Some(auth) = auth else {
        return VerificationResult::Rejected(MissingAuth);
    };
    let Some(sender) = env.sender.as_ref() else {
        return VerificationResult::Rejected(UnknownKey);
    };
    let Some(entry) = keystore.get(&auth.key_id).filter(|e| &e.sender == sender) else {
        return VerificationResult::Rejected(UnknownKey);
    };
    let mut mac = new_mac(&entry.key);
    mac.update(&mac_input(env, &auth.key_id, auth.nonce, auth.counter));
    if mac.verify_slice(&auth.signature).is_err() {
        return VerificationResult::Rejected(BadSignature);
    }
    if replay.has_seen(sender, auth.nonce) {
        return VerificationResult::Rejected(ReplayedNonce);
    }
    if auth.counter <= replay.highest_counter(sender) {
        return VerificationResult::Rejected(StaleCounter);
    }
    replay.record(sender, auth.nonce, auth.counter);
    VerificationResult::Verified
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    fn command() -> Envelope {
        Envelope::new(
            id("rupert"),
            MsgType::Command,
            1_500,
            CorrelationId(0xfeed),
            br#"{"action":"lock","device":"front_door"}"#.to_vec(),
        )
    }

    fn keystore() -> Keystore {
        let mut ks = Keystore::new();
        ks.insert("rupert-k1", id("rupert"), vec![7; 32]);
        ks.insert("percy-k1", id("percy"), vec![9; 32]);
        ks
    }

    #[test]
    fn agent_id_rejects_separators() {
        for bad in ["", "a/b", "a+", "#", "has space"] {
            assert!(AgentId::new(bad).is_err(), "{bad:?}");
        }
        assert!(AgentId::new("jeeves").is_ok());
    }

    #[test]
    fn encoding_is_deterministic() {
        let env = command();
        assert_eq!(encode_envelope(&env, None).unwrap(), encode_envelope(&env, None).unwrap());
    }

    #[test]
    fn absent_sender_is_omitted() {
        let mut env = command();
        env.sender = None;
        let text = String::from_utf8(encode_envelope(&env, None).unwrap()).unwrap();
        assert!(!text.contains("sender"));
    }

    #[test]
    fn oversized_payload_is_rejected() {
        let mut env = command();
        env.payload = vec![0; 11];
        assert_eq!(
            Codec::new(10).encode(&env, None),
            Err(EnvelopeError::PayloadTooLarge { len: 11, max: 10 })
        );
    }

    #[test]
    fn lenient_accepts_missing_sender_strict_does_not() {
        let mut env = command();
        env.sender = None;
        let bytes = encode_envelope(&env, None).unwrap();
        let (decoded, _) = decode_envelope(&bytes, DecodeMode::Lenient).unwrap();
        assert_eq!(decoded.sender, None);
        assert_eq!(
            decode_envelope(&bytes, DecodeMode::Strict),
            Err(EnvelopeError::MissingField("sender"))
        );
    }

    #[test]
    fn strict_requires_correlation_id() {
        let mut env = command();
        env.correlation_id = None;
        let bytes = encode_envelope(&env, None).unwrap();
        assert!(decode_envelope(&bytes, DecodeMode::Lenient).is_ok());
        assert_eq!(
            decode_envelope(&bytes, DecodeMode::Strict),
            Err(EnvelopeError::MissingField("correlation_id"))
        );
    }

    #[test]
    fn malformed_bytes_fail_in_both_modes() {
        for bytes in [&b"not json"[..], b"[]", br#"{"msg_type":"bogus","timestamp_us":0,"payload":""}"#] {
            assert!(matches!(
                decode_envelope(bytes, DecodeMode::Lenient),
                Err(EnvelopeError::Malformed(_))
            ));
            assert!(decode_envelope(bytes, DecodeMode::Strict).is_err());
        }
        assert_eq!(
            decode_envelope(br#"{"payload":"","timestamp_us":0}"#, DecodeMode::Lenient),
            Err(EnvelopeError::MissingField("msg_type"))
        );
    }

    #[test]
    fn full_command_roundtrip() {
        let env = command();
        let bytes = encode_envelope(&env, None).unwrap();
        assert_eq!(decode_envelope(&bytes, DecodeMode::Strict).unwrap(), (env, None));
    }

    #[test]
    fn sign_then_verify() {
        let ks = keystore();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counters = CounterState::new();
        let mut replay = ReplayState::new();
        let env = command();
        let auth = sign_envelope(&env, "rupert-k1", &ks, &mut rng, &mut counters).unwrap();
        assert_eq!(verify_envelope(&env, Some(&auth), &ks, &mut replay), VerificationResult::Verified);

        let bytes = encode_envelope(&env, Some(&auth)).unwrap();
        let (e2, a2) = decode_envelope(&bytes, DecodeMode::Strict).unwrap();
        assert_eq!(a2.as_ref(), Some(&auth));
        assert_eq!(
            verify_envelope(&e2, a2.as_ref(), &ks, &mut replay),
            VerificationResult::Rejected(RejectionReason::ReplayedNonce)
        );
    }

    #[test]
    fn counters_advance_by_one() {
        let ks = keystore();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counters = CounterState::new();
        let a = sign_envelope(&command(), "rupert-k1", &ks, &mut rng, &mut counters).unwrap();
        let b = sign_envelope(&command(), "rupert-k1", &ks, &mut rng, &mut counters).unwrap();
        assert_eq!(b.counter, a.counter + 1);
    }

    #[test]
    fn flipped_payload_byte_is_bad_signature() {
        let ks = keystore();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut env = command();
        let auth = sign_envelope(&env, "rupert-k1", &ks, &mut rng, &mut CounterState::new()).unwrap();
        env.payload[0] ^= 0x01;
        assert_eq!(
            verify_envelope(&env, Some(&auth), &ks, &mut ReplayState::new()),
            VerificationResult::Rejected(RejectionReason::BadSignature)
        );
    }

    #[test]
    fn rejection_paths() {
        let ks = keystore();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let env = command();
        let mut replay = ReplayState::new();
        assert_eq!(
            verify_envelope(&env, None, &ks, &mut replay),
            VerificationResult::Rejected(RejectionReason::MissingAuth)
        );

        let mut foreign = sign_envelope(&env, "rupert-k1", &ks, &mut rng, &mut CounterState::new()).unwrap();
        foreign.key_id = "nobody".into();
        assert_eq!(
            verify_envelope(&env, Some(&foreign), &ks, &mut replay),
            VerificationResult::Rejected(RejectionReason::UnknownKey)
        );

        // percy's key cannot vouch for rupert
        let mut spoof = env.clone();
        spoof.sender = Some(id("percy"));
        let percy_auth = sign_envelope(&spoof, "percy-k1", &ks, &mut rng, &mut CounterState::new()).unwrap();
        let mut claimed = percy_auth.clone();
        claimed.key_id = "percy-k1".into();
        assert_eq!(
            verify_envelope(&env, Some(&claimed), &ks, &mut replay),
            VerificationResult::Rejected(RejectionReason::UnknownKey)
        );

        // stale counter with a fresh nonce
        let mut counters = CounterState::new();
        let first = sign_envelope(&env, "rupert-k1", &ks, &mut rng, &mut counters).unwrap();
        let second = sign_envelope(&env, "rupert-k1", &ks, &mut rng, &mut counters).unwrap();
        assert!(verify_envelope(&env, Some(&second), &ks, &mut replay).is_verified());
        let before = replay.highest_counter(&id("rupert"));
        assert_eq!(
            verify_envelope(&env, Some(&first), &ks, &mut replay),
            VerificationResult::Rejected(RejectionReason::StaleCounter)
        );
        assert_eq!(replay.highest_counter(&id("rupert")), before);
    }

    #[test]
    fn anonymous_envelope_is_unsignable() {
        let mut env = command();
        env.sender = None;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(
            sign_envelope(&env, "rupert-k1", &keystore(), &mut rng, &mut CounterState::new()),
            Err(EnvelopeError::AnonymousSigner)
        );
    }

    #[test]
    fn replay_window_evicts_but_counter_still_guards() {
        let ks = keystore();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut counters = CounterState::new();
        let mut replay = ReplayState::with_window(2);
        let env = command();
        let first = sign_envelope(&env, "rupert-k1", &ks, &mut rng, &mut counters).unwrap();
        assert!(verify_envelope(&env, Some(&first), &ks, &mut replay).is_verified());
        for _ in 0..3 {
            let a = sign_envelope(&env, "rupert-k1", &ks, &mut rng, &mut counters).unwrap();
            assert!(verify_envelope(&env, Some(&a), &ks, &mut replay).is_verified());
        }
        assert!(!replay.has_seen(&id("rupert"), first.nonce));
        assert_eq!(
            verify_envelope(&env, Some(&first), &ks, &mut replay),
            VerificationResult::Rejected(RejectionReason::StaleCounter)
        );
    }

    #[test]
    fn keystore_text_roundtrip_and_errors() {
        let ks = keystore();
        assert_eq!(Keystore::parse(&ks.to_text()).unwrap(), ks);
        let parsed = Keystore::parse("# comment\n\nk1 percy 0a0b\n").unwrap();
        assert_eq!(parsed.get("k1").unwrap().key, vec![0x0a, 0x0b]);
        assert!(matches!(
            Keystore::parse("k1 percy\n"),
            Err(EnvelopeError::Keystore { line: 1, .. })
        ));
        assert!(Keystore::parse("k1 percy zz\n").is_err());
        assert!(Keystore::parse("k1 per/cy 00\n").is_err());
        assert!(Keystore::parse("k1 percy 00\nk1 rupert 01\n").is_err());
    }
}
