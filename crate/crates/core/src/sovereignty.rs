//! Sovereignty boundary accounting: what left the local network, which name
//! lookups preceded it, and which observation layers noticed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::envelope::{AgentId, CorrelationId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SovereigntyError {
    #[error("egress entries must carry at least one byte")]
    EmptyEgress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CloudFallback {
    Forbid,
    /// Crossings leave no trace at the coordination layer.
    #[default]
    AllowSilent,
    AllowWithMarker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundaryPolicy {
    #[serde(default)]
    pub cloud_fallback: CloudFallback,
    /// Request labels that may never leave the mesh.
    #[serde(default)]
    pub sensitive_labels: BTreeSet<String>,
}

impl BoundaryPolicy {
    pub fn new(cloud_fallback: CloudFallback) -> Self {
        Self {
            cloud_fallback,
            sensitive_labels: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgressDecision {
    Allow,
    /// Allowed, and the caller owes a boundary marker on the audit topic.
    AllowMarked,
    Deny,
}

pub fn authorize_egress(
    policy: &BoundaryPolicy,
    _agent: &AgentId,
    _destination: &str,
    label: Option<&str>,
    _bytes: u64,
) -> EgressDecision {
    if label.is_some_and(|l| policy.sensitive_labels.contains(l)) {
        return EgressDecision::Deny;
    }
    match policy.cloud_fallback {
        CloudFallback::Forbid => EgressDecision::Deny,
        CloudFallback::AllowSilent => EgressDecision::Allow,
        CloudFallback::AllowWithMarker => EgressDecision::AllowMarked,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgressCause {
    InferenceFallback,
    CloudApi,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgressEntry {
    pub timestamp_us: u64,
    pub source: AgentId,
    pub destination: String,
    pub address: String,
    pub bytes: u64,
    pub cause: EgressCause,
    /// Inference call this entry belongs to.
    pub call: CorrelationId,
}

/// Append-only record of bytes crossing the boundary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EgressLedger {
    entries: Vec<EgressEntry>,
}

impl EgressLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, entry: EgressEntry) -> Result<(), SovereigntyError> {
        if entry.bytes == 0 {
            return Err(SovereigntyError::EmptyEgress);
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[EgressEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.entries)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsEvent {
    pub timestamp_us: u64,
    pub agent: AgentId,
    pub hostname: String,
    pub address: String,
    pub call: CorrelationId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DnsLog {
    events: Vec<DnsEvent>,
}

impl DnsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, e: DnsEvent) {
        self.events.push(e);
    }

    pub fn events(&self) -> &[DnsEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.events)
    }
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|e| serde_json::to_string(e).expect("record serializes") + "\n")
        .collect()
}

/// Payload of the audit-topic marker emitted under `allow_with_marker`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryMarker {
    pub call: CorrelationId,
    pub agent: AgentId,
    pub destination: String,
    pub bytes: u64,
    pub cause: EgressCause,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DestinationTotal {
    pub addresses: BTreeSet<String>,
    pub bytes: u64,
    pub entries: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgressReport {
    pub destinations: BTreeMap<String, DestinationTotal>,
    pub external_ips: usize,
    pub total_bytes: u64,
    pub entries: usize,
    pub dns_queries: usize,
}

pub fn egress_report(ledger: &EgressLedger, dns: &DnsLog) -> EgressReport {
    let mut destinations: BTreeMap<String, DestinationTotal> = BTreeMap::new();
    let mut ips = BTreeSet::new();
    for e in ledger.entries() {
        let d = destinations.entry(e.destination.clone()).or_insert_with(|| DestinationTotal {
            addresses: BTreeSet::new(),
            bytes: 0,
            entries: 0,
        });
        d.addresses.insert(e.address.clone());
        d.bytes += e.bytes;
        d.entries += 1;
        ips.insert(e.address.clone());
    }
    EgressReport {
        total_bytes: destinations.values().map(|d| d.bytes).sum(),
        entries: ledger.len(),
        external_ips: ips.len(),
        destinations,
        dns_queries: dns.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    /// Ordinary (non-audit) traffic on the supervision mirror.
    Coordination,
    AuditMarker,
    Dns,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Coordination => "coordination",
            Layer::AuditMarker => "audit_marker",
            Layer::Dns => "dns",
        })
    }
}

/// What the supervision mirror revealed about inference calls.
#[derive(Debug, Clone, Default)]
pub struct MirrorObservations {
    /// Calls named by a boundary marker on the audit topic.
    pub markers: BTreeSet<CorrelationId>,
    /// Calls named by a coordination-layer anomaly (e.g. an error status).
    pub anomalies: BTreeSet<CorrelationId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crossing {
    pub call: CorrelationId,
    pub agent: AgentId,
    pub destination: String,
    pub bytes: u64,
    pub timestamp_us: u64,
    pub visible_at: Vec<Layer>,
}

/// One crossing per egress entry, classified by the layers that saw it.
pub fn detect_crossings(
    ledger: &EgressLedger,
    dns: &DnsLog,
    mirror: &MirrorObservations,
) -> Vec<Crossing> {
    ledger
        .entries()
        .iter()
        .map(|e| {
            let mut visible_at = Vec::new();
            if mirror.anomalies.contains(&e.call) {
                visible_at.push(Layer::Coordination);
            }
            if mirror.markers.contains(&e.call) {
                visible_at.push(Layer::AuditMarker);
            }
            if dns
                .events()
                .iter()
                .any(|d| d.call == e.call && d.hostname == e.destination)
            {
                visible_at.push(Layer::Dns);
            }
            Crossing {
                call: e.call,
                agent: e.source.clone(),
                destination: e.destination.clone(),
                bytes: e.bytes,
                timestamp_us: e.timestamp_us,
                visible_at,
            }
        })
        .collect()
}
