//! Discrete-event substrate: virtual clock, event queue, link latency models,
//! partitions and the trace every run emits.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("cannot schedule at {at_us}us, clock is already at {now_us}us")]
    InPast { at_us: u64, now_us: u64 },
    #[error("unknown link {0:?}")]
    UnknownLink(String),
    #[error("partition on link {0:?} overlaps an existing outage")]
    OverlappingPartition(String),
    #[error("partition duration must be positive")]
    EmptyPartition,
    #[error("invalid link profile {name:?}: {message}")]
    InvalidProfile { name: String, message: String },
}

/// Microseconds since scenario start. Only moves forward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now_us: u64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    fn advance_to(&mut self, t: u64) {
        debug_assert!(t >= self.now_us, "clock moved backwards");
        self.now_us = self.now_us.max(t);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId(pub u64);

#[derive(Debug, Clone)]
pub struct SimEvent<A> {
    pub fire_at_us: u64,
    pub seq: u64,
    pub action: A,
}

impl<A> SimEvent<A> {
    fn key(&self) -> (u64, u64) {
        (self.fire_at_us, self.seq)
    }
}

impl<A> PartialEq for SimEvent<A> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl<A> Eq for SimEvent<A> {}
impl<A> PartialOrd for SimEvent<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<A> Ord for SimEvent<A> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Clock plus pending events, totally ordered by `(fire_at_us, seq)`.
#[derive(Debug, Clone)]
pub struct Scheduler<A> {
    clock: VirtualClock,
    heap: BinaryHeap<Reverse<SimEvent<A>>>,
    next_seq: u64,
}

impl<A> Default for Scheduler<A> {
    fn default() -> Self {
        Self {
            clock: VirtualClock::new(),
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<A> Scheduler<A> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_us(&self) -> u64 {
        self.clock.now_us()
    }

    pub fn schedule(&mut self, fire_at_us: u64, action: A) -> Result<EventId, SimError> {
        let now_us = self.clock.now_us();
        if fire_at_us < now_us {
            return Err(SimError::InPast { at_us: fire_at_us, now_us });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(SimEvent {
            fire_at_us,
            seq,
            action,
        }));
        Ok(EventId(seq))
    }

    pub fn schedule_in(&mut self, delay_us: u64, action: A) -> EventId {
        let at = self.clock.now_us().saturating_add(delay_us);
        self.schedule(at, action).expect("future events are schedulable")
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(e)| e.fire_at_us)
    }

    /// Pops the next event and advances the clock to its fire time.
    pub fn pop(&mut self) -> Option<SimEvent<A>> {
        let Reverse(ev) = self.heap.pop()?;
        self.clock.advance_to(ev.fire_at_us);
        Some(ev)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

/// Latency model of one network path (one direction).
///
/// One traversal costs `base + jitter + per_byte * len`, where jitter is
/// lognormal with median `jitter_scale_us` and shape `jitter_sigma`. A sigma of
/// zero disables jitter entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkProfile {
    pub name: String,
    pub base_latency_us: u64,
    #[serde(default)]
    pub jitter_scale_us: f64,
    #[serde(default)]
    pub jitter_sigma: f64,
    #[serde(default)]
    pub per_byte_us: f64,
    #[serde(default)]
    pub loss_rate: f64,
}

impl LinkProfile {
    pub fn fixed(name: &str, base_latency_us: u64) -> Self {
        Self {
            name: name.into(),
            base_latency_us,
            jitter_scale_us: 0.0,
            jitter_sigma: 0.0,
            per_byte_us: 0.0,
            loss_rate: 0.0,
        }
    }

    /// Calibrated against the Mac mini → phone Tailscale path: 50 B round
    /// trips average ~23.6 ms with a heavy right tail (P99 ~33 ms), and
    /// 10 KB round trips ~34.5 ms. Configuration, not measurement.
    pub fn tailscale_m4() -> Self {
        Self {
            name: "tailscale-m4".into(),
            base_latency_us: 11_170,
            jitter_scale_us: 210.0,
            jitter_sigma: 1.5,
            per_byte_us: 0.2675,
            loss_rate: 0.0,
        }
    }

    /// NUC path: ~64.4 ms round trip, flat across payload sizes.
    pub fn nuc_n150() -> Self {
        Self {
            name: "nuc-n150".into(),
            base_latency_us: 32_080,
            jitter_scale_us: 100.0,
            jitter_sigma: 0.6,
            per_byte_us: 0.0,
            loss_rate: 0.0,
        }
    }

    /// NUC under rapid-fire load: ~49.8 ms round trip.
    pub fn burst_nuc() -> Self {
        Self {
            name: "burst-nuc".into(),
            base_latency_us: 24_780,
            jitter_scale_us: 100.0,
            jitter_sigma: 0.6,
            per_byte_us: 0.0,
            loss_rate: 0.0,
        }
    }

    pub fn builtin() -> Vec<LinkProfile> {
        vec![Self::tailscale_m4(), Self::nuc_n150(), Self::burst_nuc()]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: &str| SimError::InvalidProfile {
            name: self.name.clone(),
            message: m.into(),
        };
        if self.name.is_empty() {
            return Err(err("empty name"));
        }
        for (v, what) in [
            (self.jitter_scale_us, "jitter_scale_us"),
            (self.jitter_sigma, "jitter_sigma"),
            (self.per_byte_us, "per_byte_us"),
            (self.loss_rate, "loss_rate"),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(err(&format!("{what} must be finite and non-negative")));
            }
        }
        if self.loss_rate > 1.0 {
            return Err(err("loss_rate must be <= 1"));
        }
        Ok(())
    }

    /// Expected one-way latency for a message of `len` bytes.
    pub fn expected_us(&self, len: usize) -> f64 {
        let jitter = if self.has_jitter() {
            self.jitter_scale_us * (self.jitter_sigma * self.jitter_sigma / 2.0).exp()
        } else {
            0.0
        };
        self.base_latency_us as f64 + jitter + self.per_byte_us * len as f64
    }

    fn has_jitter(&self) -> bool {
        self.jitter_sigma > 0.0 && self.jitter_scale_us > 0.0
    }
}

/// One traversal of `profile` by a `len`-byte message, in whole microseconds (≥ 1).
pub fn sample_latency<R: Rng + ?Sized>(profile: &LinkProfile, len: usize, rng: &mut R) -> u64 {
    let jitter = if profile.has_jitter() {
        LogNormal::new(profile.jitter_scale_us.ln(), profile.jitter_sigma)
            .expect("validated profile")
            .sample(rng)
    } else {
        0.0
    };
    let total = profile.base_latency_us as f64 + jitter + profile.per_byte_us * len as f64;
    (total.round() as u64).max(1)
}

/// Whether a message on this link is lost to random loss.
pub fn sample_loss<R: Rng + ?Sized>(profile: &LinkProfile, rng: &mut R) -> bool {
    profile.loss_rate > 0.0 && rng.gen::<f64>() < profile.loss_rate
}

/// Client-side reconnect delay once the network path is back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconnectProfile {
    pub mean_us: f64,
    #[serde(default)]
    pub stddev_us: f64,
}

impl Default for ReconnectProfile {
    /// Isolated MQTT reconnection: 9.3 ms mean, 1.9 ms standard deviation.
    fn default() -> Self {
        Self {
            mean_us: 9_300.0,
            stddev_us: 1_900.0,
        }
    }
}

impl ReconnectProfile {
    pub fn fixed(mean_us: f64) -> Self {
        Self {
            mean_us,
            stddev_us: 0.0,
        }
    }

    /// Lognormal with the configured mean and standard deviation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.stddev_us <= 0.0 || self.mean_us <= 0.0 {
            return self.mean_us.max(0.0).round() as u64;
        }
        let var_ratio = (self.stddev_us / self.mean_us).powi(2);
        let sigma2 = (1.0 + var_ratio).ln();
        let mu = self.mean_us.ln() - sigma2 / 2.0;
        let d = LogNormal::new(mu, sigma2.sqrt()).expect("positive parameters");
        d.sample(rng).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionEvent {
    pub link: String,
    pub start_us: u64,
    pub duration_us: u64,
    #[serde(default)]
    pub network_recovery_us: u64,
    #[serde(default)]
    pub bridge_setup_us: u64,
}

impl PartitionEvent {
    /// Time at which the path carries traffic again.
    pub fn link_up_us(&self) -> u64 {
        self.start_us + self.duration_us + self.network_recovery_us + self.bridge_setup_us
    }
}

/// Interval during which a client could neither send nor receive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlackoutWindow {
    pub link: String,
    pub start_us: u64,
    pub link_up_us: u64,
    pub reconnect_us: u64,
    /// When the broker session was restored.
    pub restored_us: u64,
}

impl BlackoutWindow {
    pub fn duration_us(&self) -> u64 {
        self.restored_us - self.start_us
    }
}

/// A named link instance (one client's path to the broker).
#[derive(Debug, Clone)]
pub struct LinkState {
    pub profile: LinkProfile,
    outages: Vec<(u64, u64)>,
}

impl LinkState {
    pub fn new(profile: LinkProfile) -> Self {
        Self {
            profile,
            outages: Vec::new(),
        }
    }

    pub fn is_down(&self, t: u64) -> bool {
        self.outages.iter().any(|&(s, e)| t >= s && t < e)
    }

    fn add_outage(&mut self, start: u64, end: u64) -> bool {
        if self.outages.iter().any(|&(s, e)| start < e && s < end) {
            return false;
        }
        self.outages.push((start, end));
        true
    }
}

/// Named link instances of a scenario.
#[derive(Debug, Clone, Default)]
pub struct Network {
    links: BTreeMap<String, LinkState>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_link(&mut self, name: impl Into<String>, profile: LinkProfile) {
        self.links.insert(name.into(), LinkState::new(profile));
    }

    pub fn link(&self, name: &str) -> Option<&LinkState> {
        self.links.get(name)
    }

    pub fn is_down(&self, name: &str, t: u64) -> bool {
        self.links.get(name).is_some_and(|l| l.is_down(t))
    }

    /// Registers the outage `[start, link_up)` on the named link.
    pub fn add_partition(&mut self, p: &PartitionEvent) -> Result<(), SimError> {
        if p.duration_us == 0 {
            return Err(SimError::EmptyPartition);
        }
        let link = self
            .links
            .get_mut(&p.link)
            .ok_or_else(|| SimError::UnknownLink(p.link.clone()))?;
        if !link.add_outage(p.start_us, p.link_up_us()) {
            return Err(SimError::OverlappingPartition(p.link.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_us: u64,
    pub seq: u64,
    pub kind: String,
    pub details: String,
}

/// Ordered log of processed events.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, time_us: u64, seq: u64, kind: &str, details: String) {
        self.records.push(TraceRecord {
            time_us,
            seq,
            kind: kind.into(),
            details,
        });
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace record serializes") + "\n")
            .collect()
    }

    pub fn is_monotonic(&self) -> bool {
        self.records.windows(2).all(|w| w[0].time_us <= w[1].time_us)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ties_fire_in_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(10, "a").unwrap();
        s.schedule(10, "b").unwrap();
        s.schedule(5, "c").unwrap();
        let order: Vec<_> = std::iter::from_fn(|| s.pop().map(|e| e.action)).collect();
        assert_eq!(order, vec!["c", "a", "b"]);
    }

    #[test]
    fn schedule_at_now_fires_before_later_events() {
        let mut s = Scheduler::new();
        s.schedule(100, "later").unwrap();
        s.schedule(0, "now").unwrap();
        assert_eq!(s.pop().unwrap().action, "now");
    }

    #[test]
    fn scheduling_in_the_past_fails() {
        let mut s = Scheduler::new();
        s.schedule(50, ()).unwrap();
        s.pop();
        assert_eq!(s.now_us(), 50);
        assert_eq!(s.schedule(49, ()), Err(SimError::InPast { at_us: 49, now_us: 50 }));
        assert!(s.schedule(50, ()).is_ok());
    }

    #[test]
    fn empty_queue_is_exhausted() {
        let mut s: Scheduler<()> = Scheduler::new();
        assert!(s.pop().is_none());
    }

    #[test]
    fn degenerate_profile_is_exact() {
        let p = LinkProfile::fixed("flat", 23_600);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for len in [0, 50, 10_240, 1 << 20] {
            assert_eq!(sample_latency(&p, len, &mut rng), 23_600);
        }
    }

    #[test]
    fn latency_is_strictly_positive() {
        let p = LinkProfile::fixed("zero", 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_latency(&p, 0, &mut rng), 1);
    }

    #[test]
    fn nuc_profile_is_flat_across_payloads() {
        let p = LinkProfile::nuc_n150();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mean = |len: usize, rng: &mut ChaCha8Rng| {
            (0..2000).map(|_| sample_latency(&p, len, rng) as f64).sum::<f64>() / 2000.0
        };
        let small = mean(128, &mut rng);
        let big = mean(8192, &mut rng);
        assert!((small - big).abs() / small < 0.01, "{small} vs {big}");
    }

    #[test]
    fn sampler_mean_converges() {
        // N = 10,000, within 3 standard errors of base + E[jitter] + per_byte * len
        for (p, len) in [
            (LinkProfile::tailscale_m4(), 240usize),
            (LinkProfile::tailscale_m4(), 20_000),
            (LinkProfile::nuc_n150(), 300),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let n = 10_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_latency(&p, len, &mut rng) as f64).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let s2 = p.jitter_sigma * p.jitter_sigma;
            let sd = p.jitter_scale_us * ((s2.exp() - 1.0) * s2.exp()).sqrt();
            let bound = 3.0 * sd / (n as f64).sqrt() + 0.5;
            let expected = p.expected_us(len);
            assert!((mean - expected).abs() < bound, "{}: {mean} vs {expected} ± {bound}", p.name);
        }
    }

    #[test]
    fn reconnect_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(ReconnectProfile::fixed(9_300.0).sample(&mut rng), 9_300);
        let p = ReconnectProfile::default();
        let n = 5_000;
        let mean = (0..n).map(|_| p.sample(&mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 9_300.0).abs() < 3.0 * 1_900.0 / (n as f64).sqrt() + 1.0, "{mean}");
    }

    #[test]
    fn partitions_mark_outages() {
        let mut net = Network::new();
        net.add_link("percy", LinkProfile::tailscale_m4());
        let p = PartitionEvent {
            link: "percy".into(),
            start_us: 1_000,
            duration_us: 2_000,
            network_recovery_us: 500,
            bridge_setup_us: 100,
        };
        net.add_partition(&p).unwrap();
        assert!(!net.is_down("percy", 999));
        assert!(net.is_down("percy", 1_000));
        assert!(net.is_down("percy", 3_599));
        assert!(!net.is_down("percy", 3_600));
        assert_eq!(
            net.add_partition(&PartitionEvent { start_us: 3_000, ..p.clone() }),
            Err(SimError::OverlappingPartition("percy".into()))
        );
        assert_eq!(
            net.add_partition(&PartitionEvent { link: "nope".into(), ..p.clone() }),
            Err(SimError::UnknownLink("nope".into()))
        );
        assert_eq!(
            net.add_partition(&PartitionEvent { duration_us: 0, start_us: 10_000, ..p }),
            Err(SimError::EmptyPartition)
        );
    }

    #[test]
    fn builtin_profiles_validate() {
        for p in LinkProfile::builtin() {
            p.validate().unwrap();
        }
        let mut bad = LinkProfile::fixed("x", 1);
        bad.loss_rate = 1.5;
        assert!(bad.validate().is_err());
    }
}
