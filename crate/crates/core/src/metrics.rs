//! Statistics and report rendering over completed runs.
//!
//! Percentiles are nearest-rank: the value at 1-based rank `ceil(q·n)` of the
//! sorted samples. Mean and standard deviation (population) are computed from
//! exact integer sums.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::CommandBody;
use crate::broker::{MirrorWrapper, ACTUATE_PREFIX, INBOX_PREFIX};
use crate::envelope::{AgentId, CorrelationId, MsgType};
use crate::sovereignty::{EgressReport, Layer};
use crate::trust::LockoutReport;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const PERCENTILE_METHOD: &str = "nearest-rank";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot summarize an empty sample list")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean_us: f64,
    pub median_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
    pub stddev_us: f64,
    pub min_us: u64,
    pub max_us: u64,
}

/// Nearest-rank percentile of already sorted samples, `pct` in 1..=100.
pub fn nearest_rank(sorted: &[u64], pct: u32) -> u64 {
    let n = sorted.len() as u64;
    let rank = (u64::from(pct) * n).div_ceil(100).clamp(1, n);
    sorted[(rank - 1) as usize]
}

pub fn summarize(samples: &[u64]) -> Result<SummaryStats, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as u128;
    let sum: u128 = sorted.iter().map(|&x| x as u128).sum();
    let sum_sq: u128 = sorted.iter().map(|&x| (x as u128) * (x as u128)).sum();
    // n²·var = n·Σx² − (Σx)², non-negative by Cauchy-Schwarz
    let scaled_var = n * sum_sq - sum * sum;
    Ok(SummaryStats {
        n: sorted.len(),
        mean_us: sum as f64 / n as f64,
        median_us: nearest_rank(&sorted, 50),
        p95_us: nearest_rank(&sorted, 95),
        p99_us: nearest_rank(&sorted, 99),
        stddev_us: (scaled_var as f64).sqrt() / n as f64,
        min_us: sorted[0],
        max_us: sorted[sorted.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceAudit {
    pub n: usize,
    /// True when there was nothing to audit and coverage is 1.0 by definition.
    pub vacuous: bool,
    pub sender: f64,
    pub timestamp: f64,
    pub correlation_id: f64,
    pub msg_type: f64,
    pub action: f64,
}

impl ProvenanceAudit {
    pub fn fields(&self) -> [(&'static str, f64); 5] {
        [
            ("sender", self.sender),
            ("timestamp", self.timestamp),
            ("correlation_id", self.correlation_id),
            ("msg_type", self.msg_type),
            ("action", self.action),
        ]
    }

    pub fn is_complete(&self) -> bool {
        self.fields().iter().all(|(_, f)| *f == 1.0)
    }
}

fn is_command_topic(topic: &str) -> bool {
    [INBOX_PREFIX, ACTUATE_PREFIX]
        .iter()
        .any(|p| topic.strip_prefix(p).is_some_and(|r| r.starts_with('/')))
}

/// Field coverage over command messages seen on the supervision mirror.
///
/// A message is audited if it declares `msg_type = command`, or declares no
/// type at all while travelling on a command topic. Fields are judged on the
/// raw JSON, so a message the lenient decoder would reject still counts.
pub fn provenance_audit(mirror: &[MirrorWrapper]) -> ProvenanceAudit {
    let mut n = 0usize;
    let mut hits = [0usize; 5];
    for w in mirror {
        let Ok(Value::Object(obj)) = serde_json::from_slice::<Value>(&w.message) else {
            continue;
        };
        let declared = obj.get("msg_type").and_then(Value::as_str);
        let audited = match declared {
            Some(t) => t == MsgType::Command.as_str(),
            None => is_command_topic(w.topic.as_str()),
        };
        if !audited {
            continue;
        }
        n += 1;
        let sender_ok = obj
            .get("sender")
            .and_then(Value::as_str)
            .is_some_and(|s| AgentId::new(s).is_ok());
        let ts_ok = obj.get("timestamp_us").is_some_and(Value::is_u64);
        let corr_ok = obj
            .get("correlation_id")
            .and_then(Value::as_str)
            .is_some_and(|s| s.parse::<CorrelationId>().is_ok());
        let type_ok = declared.is_some_and(|t| t.parse::<MsgType>().is_ok());
        let action_ok = obj
            .get("payload")
            .and_then(Value::as_str)
            .and_then(|h| hex::decode(h).ok())
            .and_then(|b| CommandBody::parse(&b))
            .is_some();
        for (i, ok) in [sender_ok, ts_ok, corr_ok, type_ok, action_ok].into_iter().enumerate() {
            hits[i] += usize::from(ok);
        }
    }
    let frac = |h: usize| if n == 0 { 1.0 } else { h as f64 / n as f64 };
    ProvenanceAudit {
        n,
        vacuous: n == 0,
        sender: frac(hits[0]),
        timestamp: frac(hits[1]),
        correlation_id: frac(hits[2]),
        msg_type: frac(hits[3]),
        action: frac(hits[4]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandPublish {
    pub correlation_id: CorrelationId,
    pub publish_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReceipt {
    pub correlation_id: CorrelationId,
    pub received_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceClass {
    pub kind: String,
    pub actuation_duration_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interceptability {
    pub kind: String,
    pub actuation_duration_us: u64,
    pub interceptable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub stats: Option<SummaryStats>,
    pub unmatched_commands: usize,
    pub unmatched_audits: usize,
    pub verdicts: Vec<Interceptability>,
}

/// A monitor can stop an action iff it reliably sees the audit before the
/// device finishes: p99 gap strictly below the actuation time.
pub fn interceptable(p99_gap_us: u64, actuation_duration_us: u64) -> bool {
    p99_gap_us < actuation_duration_us
}

/// Gap = first mirror receipt of the audit − command publish, per correlation id.
pub fn actuation_audit_gap(commands: &[CommandPublish], audits: &[AuditReceipt], classes: &[DeviceClass]) -> GapReport {
    let mut first_receipt: BTreeMap<CorrelationId, u64> = BTreeMap::new();
    for a in audits {
        first_receipt
            .entry(a.correlation_id)
            .and_modify(|t| *t = (*t).min(a.received_us))
            .or_insert(a.received_us);
    }
    let mut gaps = Vec::new();
    let mut matched = BTreeSet::new();
    let mut unmatched_commands = 0;
    for c in commands {
        match first_receipt.get(&c.correlation_id) {
            Some(&r) if r >= c.publish_us => {
                gaps.push(r - c.publish_us);
                matched.insert(c.correlation_id);
            }
            _ => unmatched_commands += 1,
        }
    }
    let unmatched_audits = first_receipt.keys().filter(|c| !matched.contains(c)).count();
    let stats = summarize(&gaps).ok();
    let verdicts = classes
        .iter()
        .map(|d| Interceptability {
            kind: d.kind.clone(),
            actuation_duration_us: d.actuation_duration_us,
            interceptable: stats
                .as_ref()
                .is_some_and(|s| interceptable(s.p99_us, d.actuation_duration_us)),
        })
        .collect();
    GapReport {
        stats,
        unmatched_commands,
        unmatched_audits,
        verdicts,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailoverDecomposition {
    pub partition_us: u64,
    pub network_recovery_us: u64,
    pub bridge_setup_us: u64,
    pub reconnect_us: u64,
    pub total_blackout_us: u64,
    pub unaudited_actuations: usize,
}

impl FailoverDecomposition {
    pub fn phase_sum_us(&self) -> u64 {
        self.partition_us + self.network_recovery_us + self.bridge_setup_us + self.reconnect_us
    }

    pub fn is_additive(&self) -> bool {
        self.phase_sum_us() == self.total_blackout_us
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub profile: String,
    pub payload_bytes: usize,
    pub timeouts: usize,
    pub stats: Option<SummaryStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub kind: String,
    pub surface: String,
    pub label: String,
    pub broker_response: String,
    pub impact: String,
    pub evidence: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgressRow {
    pub architecture: String,
    pub operations: u64,
    pub report: EgressReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SovereigntyRow {
    pub policy: String,
    pub request_bytes: u64,
    pub egress_entries: usize,
    pub egress_bytes: u64,
    pub dns_queries: usize,
    pub resolved: Vec<String>,
    pub markers: usize,
    pub coordination_anomalies: usize,
    pub visible_at: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailoverSection {
    pub decomposition: FailoverDecomposition,
    pub gap: GapReport,
    pub reconnect: Option<SummaryStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub mode: String,
    pub writers: u32,
    pub divergent_copies: usize,
    pub conflicts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRow {
    pub mode: String,
    pub forged: usize,
    pub legitimate_obeyed: bool,
    pub required_oob: bool,
    pub lockout: LockoutReport,
}

/// Everything a run produced, in the shape of the machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub posture: String,
    pub percentile_method: String,
    pub latency: Option<Vec<LatencyRow>>,
    pub attacks: Option<Vec<AttackRow>>,
    pub provenance: Option<ProvenanceAudit>,
    pub egress: Option<Vec<EgressRow>>,
    pub sovereignty: Option<Vec<SovereigntyRow>>,
    pub failover: Option<FailoverSection>,
    pub interceptability: Option<GapReport>,
    pub drift: Option<Vec<DriftRow>>,
    pub trust: Option<Vec<TrustRow>>,
}

impl Report {
    pub fn new(scenario: &str, seed: u64, posture: &str) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            scenario: scenario.into(),
            seed,
            posture: posture.into(),
            percentile_method: PERCENTILE_METHOD.into(),
            latency: None,
            attacks: None,
            provenance: None,
            egress: None,
            sovereignty: None,
            failover: None,
            interceptability: None,
            drift: None,
            trust: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.latency.is_none()
            && self.attacks.is_none()
            && self.provenance.is_none()
            && self.egress.is_none()
            && self.sovereignty.is_none()
            && self.failover.is_none()
            && self.interceptability.is_none()
            && self.drift.is_none()
            && self.trust.is_none()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn ms(us: u64) -> String {
    format!("{:.1} ms", us as f64 / 1_000.0)
}

fn ms_f(us: f64) -> String {
    format!("{:.1} ms", us / 1_000.0)
}

fn secs(us: u64) -> String {
    format!("{:.3} s", us as f64 / 1_000_000.0)
}

fn pct(f: f64) -> String {
    format!("{:.1}%", f * 100.0)
}

fn payload_label(bytes: usize) -> String {
    if bytes >= 1024 && bytes.is_multiple_of(1024) {
        format!("{} KB", bytes / 1024)
    } else {
        format!("{bytes} B")
    }
}

/// Left-aligned plain-text table with a dashed rule under the header.
fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut l = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                l.push_str("  ");
            }
            let _ = write!(l, "{c:<w$}");
        }
        l.trim_end().to_string() + "\n"
    };
    out.push_str(&line(header.to_vec()));
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
}

fn section(out: &mut String, title: &str) {
    let _ = writeln!(out, "\n== {title} ==");
}

fn no_data(out: &mut String) {
    out.push_str("no data\n");
}

/// Human-readable rendering. Deterministic: same report, same bytes.
pub fn render_report(r: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario: {}", r.scenario);
    let _ = writeln!(out, "seed: {}  posture: {}  percentiles: {}", r.seed, r.posture, r.percentile_method);

    section(&mut out, "Actuation-to-audit delay (echo round trip)");
    match &r.latency {
        Some(rows) if !rows.is_empty() => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|row| match &row.stats {
                    Some(s) => vec![
                        row.profile.clone(),
                        payload_label(row.payload_bytes),
                        s.n.to_string(),
                        ms_f(s.mean_us),
                        ms(s.median_us),
                        ms(s.p95_us),
                        ms(s.p99_us),
                        row.timeouts.to_string(),
                    ],
                    None => vec![
                        row.profile.clone(),
                        payload_label(row.payload_bytes),
                        "0".into(),
                        "-".into(),
                        "-".into(),
                        "-".into(),
                        "-".into(),
                        row.timeouts.to_string(),
                    ],
                })
                .collect();
            table(&mut out, &["Profile", "Payload", "N", "Mean", "Median", "P95", "P99", "Timeouts"], &body);
        }
        _ => no_data(&mut out),
    }

    section(&mut out, "Adversarial provenance testing");
    match &r.attacks {
        Some(rows) if !rows.is_empty() => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|a| vec![a.surface.clone(), a.label.clone(), a.broker_response.clone(), a.impact.clone()])
                .collect();
            table(&mut out, &["Surface", "Attack", "Broker Response", "Impact"], &body);
        }
        _ => no_data(&mut out),
    }

    section(&mut out, "Provenance coverage");
    match &r.provenance {
        Some(p) => {
            let mut body: Vec<Vec<String>> = p.fields().iter().map(|(f, v)| vec![f.to_string(), pct(*v)]).collect();
            body.push(vec!["commands audited".into(), p.n.to_string()]);
            if p.vacuous {
                body.push(vec!["note".into(), "vacuous (no commands observed)".into()]);
            }
            table(&mut out, &["Field", "Coverage"], &body);
        }
        None => no_data(&mut out),
    }

    section(&mut out, "Data egress");
    match &r.egress {
        Some(rows) if !rows.is_empty() => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|e| {
                    vec![
                        e.architecture.clone(),
                        e.report.external_ips.to_string(),
                        format!("{} B", e.report.total_bytes),
                        e.operations.to_string(),
                    ]
                })
                .collect();
            table(&mut out, &["Architecture", "External IPs", "Bytes Sent", "Operations"], &body);
        }
        _ => no_data(&mut out),
    }

    section(&mut out, "Sovereignty boundary crossing");
    match &r.sovereignty {
        Some(rows) if !rows.is_empty() => {
            let header: Vec<String> = std::iter::once("Metric".to_string()).chain(rows.iter().map(|s| s.policy.clone())).collect();
            let metric = |name: &str, f: &dyn Fn(&SovereigntyRow) -> String| {
                std::iter::once(name.to_string()).chain(rows.iter().map(f)).collect::<Vec<_>>()
            };
            let body = vec![
                metric("Request size", &|s| format!("{} B", s.request_bytes)),
                metric("Egress entries", &|s| s.egress_entries.to_string()),
                metric("Bytes to cloud", &|s| format!("{} B", s.egress_bytes)),
                metric("DNS queries", &|s| s.dns_queries.to_string()),
                metric("Resolved IP", &|s| if s.resolved.is_empty() { "---".into() } else { s.resolved.join(",") }),
                metric("Audit markers", &|s| s.markers.to_string()),
                metric("MQTT-layer anomaly", &|s| if s.coordination_anomalies == 0 { "None".into() } else { s.coordination_anomalies.to_string() }),
                metric("Visible at", &|s| {
                    if s.visible_at.is_empty() {
                        "---".into()
                    } else {
                        s.visible_at.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("+")
                    }
                }),
            ];
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            table(&mut out, &header, &body);
        }
        _ => no_data(&mut out),
    }

    section(&mut out, "Failover blackout");
    match &r.failover {
        Some(f) => {
            let d = &f.decomposition;
            let mut body = vec![
                vec!["Partition".into(), secs(d.partition_us)],
                vec!["Network recovery".into(), secs(d.network_recovery_us)],
                vec!["Bridge setup".into(), secs(d.bridge_setup_us)],
                vec!["Reconnect".into(), ms(d.reconnect_us)],
                vec!["Total blackout".into(), secs(d.total_blackout_us)],
                vec!["Unaudited actuations".into(), d.unaudited_actuations.to_string()],
            ];
            if let Some(s) = &f.gap.stats {
                body.push(vec!["Max actuation-audit gap".into(), secs(s.max_us)]);
            }
            if let Some(s) = &f.reconnect {
                body.push(vec![
                    "Reconnection (isolated)".into(),
                    format!("mean {} (sd {}), P95 {}, P99 {}, N={}", ms_f(s.mean_us), ms_f(s.stddev_us), ms(s.p95_us), ms(s.p99_us), s.n),
                ]);
            }
            table(&mut out, &["Metric", "Value"], &body);
        }
        None => no_data(&mut out),
    }

    section(&mut out, "Interceptability");
    match &r.interceptability {
        Some(g) => {
            if let Some(s) = &g.stats {
                let _ = writeln!(out, "gap: mean {}  P99 {}  N={}", ms_f(s.mean_us), ms(s.p99_us), s.n);
            } else {
                out.push_str("gap: no matched samples\n");
            }
            let body: Vec<Vec<String>> = g
                .verdicts
                .iter()
                .map(|v| {
                    vec![
                        v.kind.clone(),
                        ms(v.actuation_duration_us),
                        if v.interceptable { "interceptable" } else { "not interceptable" }.into(),
                    ]
                })
                .collect();
            table(&mut out, &["Device", "Actuation", "Verdict"], &body);
        }
        None => no_data(&mut out),
    }

    section(&mut out, "Coordination-state divergence");
    match &r.drift {
        Some(rows) if !rows.is_empty() => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|d| vec![d.mode.clone(), d.writers.to_string(), d.divergent_copies.to_string(), d.conflicts.to_string()])
                .collect();
            table(&mut out, &["Mode", "Writers", "Divergent copies", "Conflicts"], &body);
        }
        _ => no_data(&mut out),
    }

    section(&mut out, "Induced trust erosion");
    match &r.trust {
        Some(rows) if !rows.is_empty() => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|t| {
                    vec![
                        t.mode.clone(),
                        t.forged.to_string(),
                        if t.legitimate_obeyed { "yes" } else { "no" }.into(),
                        if t.required_oob { "yes" } else { "no" }.into(),
                        secs(t.lockout.lockout_us),
                        t.lockout.refused_verified.to_string(),
                        t.lockout.quarantined.to_string(),
                    ]
                })
                .collect();
            table(
                &mut out,
                &["Trust", "Forged", "Legit obeyed", "OOB required", "Lockout", "Verified refused", "Quarantined"],
                &body,
            );
        }
        _ => no_data(&mut out),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::Topic;
    use crate::envelope::{encode_envelope, Envelope};

    #[test]
    fn nearest_rank_on_one_to_hundred() {
        let s = summarize(&(1..=100).collect::<Vec<_>>()).unwrap();
        assert_eq!((s.median_us, s.p95_us, s.p99_us), (50, 95, 99));
        assert_eq!(s.mean_us, 50.5);
    }

    #[test]
    fn constant_samples() {
        let s = summarize(&[7; 13]).unwrap();
        assert_eq!((s.median_us, s.p95_us, s.p99_us, s.min_us, s.max_us), (7, 7, 7, 7, 7));
        assert_eq!(s.stddev_us, 0.0);
        assert_eq!(s.mean_us, 7.0);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(summarize(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn population_stddev() {
        let s = summarize(&[2, 4, 4, 4, 5, 5, 7, 9]).unwrap();
        assert_eq!(s.stddev_us, 2.0);
    }

    fn wrap(topic: Topic, env: &Envelope) -> MirrorWrapper {
        MirrorWrapper {
            topic,
            broker_timestamp_us: 0,
            message: encode_envelope(env, None).unwrap(),
        }
    }

    fn command(i: u128, sender: Option<&str>) -> Envelope {
        Envelope {
            sender: sender.map(|s| AgentId::new(s).unwrap()),
            msg_type: MsgType::Command,
            timestamp_us: 5,
            correlation_id: Some(CorrelationId(i)),
            payload: CommandBody::actuate("lamp", "on").to_bytes(),
        }
    }

    #[test]
    fn provenance_counts_missing_sender() {
        let mut log: Vec<_> = (0..100).map(|i| wrap(Topic::inbox("jeeves"), &command(i, Some("rupert")))).collect();
        let p = provenance_audit(&log);
        assert!(p.is_complete());
        assert_eq!(p.n, 100);
        log.push(wrap(Topic::inbox("jeeves"), &command(100, None)));
        let p = provenance_audit(&log);
        assert_eq!(p.n, 101);
        assert_eq!(p.sender, 100.0 / 101.0);
        assert_eq!(p.action, 1.0);
    }

    #[test]
    fn provenance_ignores_non_commands_and_handles_empty() {
        let mut hb = command(1, Some("percy"));
        hb.msg_type = MsgType::Heartbeat;
        let p = provenance_audit(&[wrap(Topic::broadcast(), &hb)]);
        assert!(p.vacuous);
        assert_eq!(p.n, 0);
        assert!(p.is_complete());
    }

    #[test]
    fn gap_verdicts() {
        let commands: Vec<_> = (0..100)
            .map(|i| CommandPublish { correlation_id: CorrelationId(i), publish_us: i as u64 * 1_000_000 })
            .collect();
        let audits: Vec<_> = (0..100)
            .map(|i| AuditReceipt { correlation_id: CorrelationId(i), received_us: i as u64 * 1_000_000 + 23_500 })
            .collect();
        let classes = [
            DeviceClass { kind: "lock".into(), actuation_duration_us: 500_000 },
            DeviceClass { kind: "relay".into(), actuation_duration_us: 5_000 },
        ];
        let g = actuation_audit_gap(&commands, &audits[1..], &classes);
        assert_eq!(g.unmatched_commands, 1);
        assert!(g.verdicts[0].interceptable);
        assert!(!g.verdicts[1].interceptable);
        assert_eq!(g.stats.unwrap().p99_us, 23_500);
    }

    #[test]
    fn render_is_deterministic_and_labels_empty_sections() {
        let r = Report::new("empty", 1, "baseline");
        let text = render_report(&r);
        assert_eq!(text, render_report(&r));
        assert_eq!(text.matches("no data").count(), 9);
        assert!(r.is_empty());
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn decomposition_additivity() {
        let d = FailoverDecomposition {
            partition_us: 2_000_000,
            network_recovery_us: 33_600_000,
            bridge_setup_us: 100_000,
            reconnect_us: 9_300,
            total_blackout_us: 35_709_300,
            unaudited_actuations: 1,
        };
        assert!(d.is_additive());
    }
}
