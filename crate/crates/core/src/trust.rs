//! Inbox trust decisions for forged-traffic floods.
//!
//! Baseline trust has no cryptographic evidence to work with. It notices
//! forgeries semantically (unknown sender, a timestamp older than the claimed
//! sender's own heartbeat stream, nonsense payloads) and, once enough pile up,
//! stops trusting the whole channel until an operator confirms out of band.
//! Hardened trust decides per message from the verification result.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::envelope::{AgentId, CorrelationId, Envelope, VerificationResult, RejectionReason};

pub const DEFAULT_DISTRUST_THRESHOLD: u32 = 5;
/// Payload marker the flood uses to look obviously forged.
pub const NONSENSE_TAG: &str = "nonsense";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrustMode {
    #[default]
    Baseline,
    Hardened,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assessment {
    Accept,
    Quarantine,
    Refuse,
    RequireOob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suspicion {
    UnknownSender,
    MissingSender,
    ContradictsHeartbeats,
    NonsensePayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantinedEnvelope {
    pub time_us: u64,
    pub claimed_sender: Option<AgentId>,
    pub correlation_id: Option<CorrelationId>,
    pub reason: String,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustEvent {
    pub time_us: u64,
    pub claimed_sender: Option<AgentId>,
    pub correlation_id: Option<CorrelationId>,
    pub verified: bool,
    pub assessment: Assessment,
}

/// The operator's trusted side channel. Anything arriving on it is authentic
/// by assumption; the only modeled property is how long a human takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OobChannel {
    pub response_delay_us: u64,
}

impl Default for OobChannel {
    fn default() -> Self {
        Self {
            response_delay_us: 60_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrustState {
    pub mode: TrustMode,
    pub threshold: u32,
    roster: BTreeSet<AgentId>,
    scores: BTreeMap<AgentId, f64>,
    last_heartbeat: BTreeMap<AgentId, u64>,
    forgeries: u32,
    channel_distrust: bool,
    distrust_since: Option<u64>,
    lockouts: Vec<(u64, u64)>,
    quarantine: Vec<QuarantinedEnvelope>,
    pending_oob: Vec<CorrelationId>,
    events: Vec<TrustEvent>,
}

impl TrustState {
    pub fn new(mode: TrustMode, roster: impl IntoIterator<Item = AgentId>) -> Self {
        Self {
            mode,
            threshold: DEFAULT_DISTRUST_THRESHOLD,
            roster: roster.into_iter().collect(),
            scores: BTreeMap::new(),
            last_heartbeat: BTreeMap::new(),
            forgeries: 0,
            channel_distrust: false,
            distrust_since: None,
            lockouts: Vec::new(),
            quarantine: Vec::new(),
            pending_oob: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn with_threshold(mut self, threshold: u32) -> Self {
        self.threshold = threshold.max(1);
        self
    }

    /// Feeds the heartbeat stream used for semantic forgery detection.
    pub fn observe_heartbeat(&mut self, sender: &AgentId, timestamp_us: u64) {
        let last = self.last_heartbeat.entry(sender.clone()).or_insert(0);
        *last = (*last).max(timestamp_us);
    }

    pub fn channel_distrust(&self) -> bool {
        self.channel_distrust
    }

    pub fn distrust_since(&self) -> Option<u64> {
        self.distrust_since
    }

    pub fn score(&self, sender: &AgentId) -> f64 {
        self.scores.get(sender).copied().unwrap_or(1.0)
    }

    pub fn forgeries(&self) -> u32 {
        self.forgeries
    }

    pub fn quarantine(&self) -> &[QuarantinedEnvelope] {
        &self.quarantine
    }

    pub fn pending_oob(&self) -> &[CorrelationId] {
        &self.pending_oob
    }

    pub fn events(&self) -> &[TrustEvent] {
        &self.events
    }

    /// What a careful reader without keys would flag about `env`.
    pub fn suspicion(&self, env: &Envelope) -> Option<Suspicion> {
        let Some(sender) = &env.sender else {
            return Some(Suspicion::MissingSender);
        };
        if !self.roster.contains(sender) {
            return Some(Suspicion::UnknownSender);
        }
        if self
            .last_heartbeat
            .get(sender)
            .is_some_and(|&hb| env.timestamp_us < hb)
        {
            return Some(Suspicion::ContradictsHeartbeats);
        }
        let text = String::from_utf8_lossy(&env.payload);
        if text.contains(NONSENSE_TAG) {
            return Some(Suspicion::NonsensePayload);
        }
        None
    }

    pub fn assess(&mut self, env: &Envelope, verification: &VerificationResult, now_us: u64) -> Assessment {
        let verified = verification.is_verified();
        let assessment = match self.mode {
            TrustMode::Baseline => self.assess_baseline(env, now_us),
            TrustMode::Hardened => self.assess_hardened(env, verification, now_us),
        };
        if let Some(sender) = &env.sender {
            let s = self.scores.entry(sender.clone()).or_insert(1.0);
            *s = match assessment {
                Assessment::Accept => (*s + 0.1).min(1.0),
                Assessment::Quarantine => *s * 0.5,
                Assessment::Refuse | Assessment::RequireOob => *s,
            };
        }
        self.events.push(TrustEvent {
            time_us: now_us,
            claimed_sender: env.sender.clone(),
            correlation_id: env.correlation_id,
            verified,
            assessment,
        });
        assessment
    }

    fn assess_baseline(&mut self, env: &Envelope, now_us: u64) -> Assessment {
        if self.channel_distrust {
            return Assessment::Refuse;
        }
        if self.suspicion(env).is_none() {
            return Assessment::Accept;
        }
        self.forgeries += 1;
        if self.forgeries >= self.threshold {
            self.channel_distrust = true;
            self.distrust_since = Some(now_us);
        }
        Assessment::Refuse
    }

    fn assess_hardened(&mut self, env: &Envelope, verification: &VerificationResult, now_us: u64) -> Assessment {
        match verification {
            VerificationResult::Verified => Assessment::Accept,
            VerificationResult::Rejected(RejectionReason::MissingAuth) if self.suspicion(env).is_none() => {
                if let Some(c) = env.correlation_id {
                    self.pending_oob.push(c);
                }
                Assessment::RequireOob
            }
            VerificationResult::Rejected(reason) => {
                let reason = match self.suspicion(env) {
                    Some(s) => format!("{reason}; {s:?}"),
                    None => reason.to_string(),
                };
                self.quarantine.push(QuarantinedEnvelope {
                    time_us: now_us,
                    claimed_sender: env.sender.clone(),
                    correlation_id: env.correlation_id,
                    reason,
                    payload: env.payload.clone(),
                });
                Assessment::Quarantine
            }
        }
    }

    /// Operator confirmation on the side channel: clears channel distrust.
    pub fn oob_confirm(&mut self, now_us: u64) {
        if let Some(since) = self.distrust_since.take() {
            self.lockouts.push((since, now_us));
        }
        self.channel_distrust = false;
        self.forgeries = 0;
        self.pending_oob.clear();
    }

    /// Lockout totals. A distrust still in force at `end_us` counts up to it.
    pub fn lockout_report(&self, end_us: u64) -> LockoutReport {
        let mut lockout_us: u64 = self.lockouts.iter().map(|(s, e)| e - s).sum();
        if let Some(since) = self.distrust_since {
            lockout_us += end_us.saturating_sub(since);
        }
        let refused = |verified_only: bool| {
            self.events
                .iter()
                .filter(|e| e.assessment == Assessment::Refuse && (!verified_only || e.verified))
                .count()
        };
        LockoutReport {
            lockout_us,
            lockouts: self.lockouts.len() + usize::from(self.distrust_since.is_some()),
            refused_commands: refused(false),
            refused_verified: refused(true),
            quarantined: self.quarantine.len(),
            resolved: self.distrust_since.is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockoutReport {
    pub lockout_us: u64,
    pub lockouts: usize,
    pub refused_commands: usize,
    pub refused_verified: usize,
    pub quarantined: usize,
    /// False if the run ended while the channel was still distrusted.
    pub resolved: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::MsgType;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    fn roster() -> Vec<AgentId> {
        ["rupert", "percy", "jeeves", "operator"].map(id).to_vec()
    }

    fn forged(i: u128) -> Envelope {
        Envelope::new(id("percy"), MsgType::Command, 0, CorrelationId(i), format!(r#"{{"tag":"{NONSENSE_TAG}"}}"#).into_bytes())
    }

    fn legit(ts: u64) -> Envelope {
        Envelope::new(id("operator"), MsgType::Command, ts, CorrelationId(999), br#"{"kind":"actuate"}"#.to_vec())
    }

    const UNSIGNED: VerificationResult = VerificationResult::Rejected(RejectionReason::MissingAuth);

    #[test]
    fn baseline_flood_locks_out_legitimate_commands() {
        let mut t = TrustState::new(TrustMode::Baseline, roster());
        for i in 0..20 {
            assert_eq!(t.assess(&forged(i), &UNSIGNED, 10_000_000), Assessment::Refuse);
        }
        assert!(t.channel_distrust());
        assert_eq!(t.assess(&legit(10_500_000), &UNSIGNED, 10_500_000), Assessment::Refuse);
        t.oob_confirm(70_000_000);
        assert_eq!(t.assess(&legit(70_100_000), &UNSIGNED, 70_100_000), Assessment::Accept);
        let r = t.lockout_report(80_000_000);
        assert_eq!(r.lockout_us, 60_000_000);
        assert_eq!(r.refused_commands, 21);
        assert!(r.resolved);
    }

    #[test]
    fn lockout_iff_threshold_reached() {
        for k in 0..10u32 {
            let mut t = TrustState::new(TrustMode::Baseline, roster());
            for i in 0..k {
                t.assess(&forged(i as u128), &UNSIGNED, 1);
            }
            assert_eq!(t.channel_distrust(), k >= DEFAULT_DISTRUST_THRESHOLD, "k={k}");
        }
    }

    #[test]
    fn no_forgeries_no_lockout() {
        let mut t = TrustState::new(TrustMode::Baseline, roster());
        assert_eq!(t.assess(&legit(5), &UNSIGNED, 5), Assessment::Accept);
        assert_eq!(t.lockout_report(100).lockout_us, 0);
    }

    #[test]
    fn hardened_quarantines_individually_and_accepts_verified() {
        let mut t = TrustState::new(TrustMode::Hardened, roster());
        let bad_sig = VerificationResult::Rejected(RejectionReason::BadSignature);
        for i in 0..20 {
            assert_eq!(t.assess(&forged(i), &bad_sig, 1), Assessment::Quarantine);
        }
        assert_eq!(t.assess(&legit(2), &VerificationResult::Verified, 2), Assessment::Accept);
        assert_eq!(t.assess(&legit(3), &UNSIGNED, 3), Assessment::RequireOob);
        assert!(!t.channel_distrust());
        let r = t.lockout_report(10);
        assert_eq!((r.lockout_us, r.refused_verified, r.quarantined), (0, 0, 20));
        assert_eq!(t.quarantine()[0].correlation_id, Some(CorrelationId(0)));
    }

    #[test]
    fn heartbeat_contradiction_is_suspicious() {
        let mut t = TrustState::new(TrustMode::Baseline, roster());
        t.observe_heartbeat(&id("percy"), 5_000);
        let mut env = legit(4_000);
        env.sender = Some(id("percy"));
        assert_eq!(t.suspicion(&env), Some(Suspicion::ContradictsHeartbeats));
        env.timestamp_us = 6_000;
        assert_eq!(t.suspicion(&env), None);
        env.sender = Some(id("mallory"));
        assert_eq!(t.suspicion(&env), Some(Suspicion::UnknownSender));
    }

    #[test]
    fn unresolved_lockout_runs_to_end() {
        let mut t = TrustState::new(TrustMode::Baseline, roster()).with_threshold(1);
        t.assess(&forged(1), &UNSIGNED, 100);
        let r = t.lockout_report(1_100);
        assert_eq!(r.lockout_us, 1_000);
        assert!(!r.resolved);
    }
}
