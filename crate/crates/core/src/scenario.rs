//! Declarative scenarios: one TOML file describes a deployment plus the
//! experiments to run against it.
//!
//! Unknown keys are rejected so a typo cannot silently change what an
//! experiment measures. Every experiment runs in its own freshly built world,
//! seeded from the scenario seed, so sections never influence each other.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{AgentSpec, CommandBody, DeviceKind, DeviceSpec, Role, DEFAULT_DNS_QUERIES_PER_CALL};
use crate::attacks::{run_attack, AttackError, AttackKind, AttackParams, PartitionPlan};
use crate::broker::{Posture, Topic};
use crate::envelope::{AgentId, CorrelationId, Envelope, MsgType};
use crate::metrics::{
    provenance_audit, render_report, summarize, DriftRow, EgressRow, FailoverSection, LatencyRow, Report,
    SovereigntyRow, TrustRow,
};
use crate::netsim::{LinkProfile, ReconnectProfile, Trace};
use crate::sovereignty::CloudFallback;
use crate::stateplane::StateMode;
use crate::trust::{LockoutReport, OobChannel, TrustMode, DEFAULT_DISTRUST_THRESHOLD};
use crate::world::{World, WorldConfig, WorldError, MONITOR, OPERATOR, ROGUE};

pub const TOOL_NAME: &str = "edgeswarm";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    CloudHosted,
    EdgeLocal,
    Hybrid,
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Archetype::CloudHosted => "cloud_hosted",
            Archetype::EdgeLocal => "edge_local",
            Archetype::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundarySection {
    /// Left unset, the posture decides.
    pub cloud_fallback: Option<CloudFallback>,
    pub sensitive_labels: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSuiteSection {
    /// Subset to run; all kinds when absent.
    pub kinds: Option<Vec<AttackKind>>,
    pub params: AttackParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CooperativeSection {
    pub commands: usize,
    pub interval_us: u64,
    /// Devices to cycle through; every configured device when absent.
    pub devices: Option<Vec<String>>,
}

impl Default for CooperativeSection {
    fn default() -> Self {
        Self {
            commands: 100,
            interval_us: 1_000_000,
            devices: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySection {
    pub targets: Vec<String>,
    pub payload_bytes: Vec<usize>,
    pub probes: usize,
    pub timeout_us: u64,
}

impl Default for LatencySection {
    fn default() -> Self {
        Self {
            targets: vec!["percy".into()],
            payload_bytes: vec![50, 1024, 10 * 1024],
            probes: 150,
            timeout_us: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgressSection {
    pub mqtt_publishes: u64,
    pub sensor_reads: u64,
    pub light_commands: u64,
    /// Inference requests routed through the mobile agent.
    pub api_calls: u64,
    pub api_request_bytes: u64,
    pub interval_us: u64,
}

impl Default for EgressSection {
    fn default() -> Self {
        Self {
            mqtt_publishes: 50,
            sensor_reads: 200,
            light_commands: 30,
            api_calls: 0,
            api_request_bytes: 6_498,
            interval_us: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FallbackSection {
    pub request_bytes: u64,
    /// Policies to compare; the scenario's own policy when empty.
    pub policies: Vec<CloudFallback>,
}

impl Default for FallbackSection {
    fn default() -> Self {
        Self {
            request_bytes: 109 * 1024,
            policies: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailoverSectionConfig {
    pub partition: PartitionPlan,
    pub command_lead_us: u64,
    pub device: String,
    /// Isolated reconnects sampled for the reconnect-delay table.
    pub reconnect_samples: usize,
}

impl Default for FailoverSectionConfig {
    fn default() -> Self {
        Self {
            partition: PartitionPlan::default(),
            command_lead_us: 1_000,
            device: "front_door".into(),
            reconnect_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterceptabilitySection {
    pub commands_per_device: usize,
    pub interval_us: u64,
}

impl Default for InterceptabilitySection {
    fn default() -> Self {
        Self {
            commands_per_device: 20,
            interval_us: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSection {
    pub writers: usize,
    pub modes: Vec<StateMode>,
}

impl Default for DriftSection {
    fn default() -> Self {
        Self {
            writers: 2,
            modes: vec![StateMode::Embedded, StateMode::StatePlane],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloodSection {
    pub k: usize,
    pub postures: Vec<Posture>,
}

impl Default for FloodSection {
    fn default() -> Self {
        Self {
            k: 20,
            postures: vec![Posture::Baseline, Posture::Hardened],
        }
    }
}

fn default_archetype() -> Archetype {
    Archetype::EdgeLocal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_archetype")]
    pub archetype: Archetype,
    #[serde(default)]
    pub seed: u64,
    /// Heartbeats run until this time in every experiment world.
    #[serde(default)]
    pub duration_us: u64,
    #[serde(default)]
    pub posture: Posture,
    #[serde(default)]
    pub trust_mode: Option<TrustMode>,
    #[serde(default)]
    pub state_mode: Option<StateMode>,
    #[serde(default)]
    pub distrust_threshold: Option<u32>,
    #[serde(default)]
    pub dns_queries_per_call: Option<u32>,
    #[serde(default)]
    pub boundary: BoundarySection,
    #[serde(default)]
    pub oob: Option<OobChannel>,
    #[serde(default)]
    pub reconnect: Option<ReconnectProfile>,
    /// Replaces the default three-agent roster when non-empty.
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub profiles: Vec<LinkProfile>,
    /// Hostname to addresses; merged over the defaults.
    #[serde(default)]
    pub hosts: BTreeMap<String, Vec<String>>,

    #[serde(default)]
    pub attack_suite: Option<AttackSuiteSection>,
    #[serde(default)]
    pub cooperative: Option<CooperativeSection>,
    #[serde(default)]
    pub latency: Option<LatencySection>,
    #[serde(default)]
    pub egress: Option<EgressSection>,
    #[serde(default)]
    pub fallback: Option<FallbackSection>,
    #[serde(default)]
    pub failover: Option<FailoverSectionConfig>,
    #[serde(default)]
    pub interceptability: Option<InterceptabilitySection>,
    #[serde(default)]
    pub drift: Option<DriftSection>,
    #[serde(default)]
    pub flood: Option<FloodSection>,
}

/// One problem found in a config, located by a dotted path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl std::error::Error for ConfigError {}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    AttackSuite,
    Cooperative,
    Latency,
    Egress,
    Fallback,
    Failover,
    Interceptability,
    Drift,
    Flood,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::AttackSuite,
        Experiment::Cooperative,
        Experiment::Latency,
        Experiment::Egress,
        Experiment::Fallback,
        Experiment::Failover,
        Experiment::Interceptability,
        Experiment::Drift,
        Experiment::Flood,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::AttackSuite => "attack_suite",
            Experiment::Cooperative => "cooperative",
            Experiment::Latency => "latency",
            Experiment::Egress => "egress",
            Experiment::Fallback => "fallback",
            Experiment::Failover => "failover",
            Experiment::Interceptability => "interceptability",
            Experiment::Drift => "drift",
            Experiment::Flood => "flood",
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "<config>".into());
            ConfigError::new(path, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e.to_string()))?;
        Self::parse(&text).map_err(|e| ConfigError::new(format!("{}: {}", path.display(), e.path), e.message))
    }

    /// A posture given on the command line overrides every posture-derived
    /// field in the file.
    pub fn override_posture(&mut self, posture: Posture) {
        self.posture = posture;
        self.trust_mode = None;
        self.state_mode = None;
        self.boundary.cloud_fallback = None;
    }

    /// Experiments configured in this file, in execution order.
    pub fn experiments(&self) -> Vec<Experiment> {
        let present = [
            self.attack_suite.is_some(),
            self.cooperative.is_some(),
            self.latency.is_some(),
            self.egress.is_some(),
            self.fallback.is_some(),
            self.failover.is_some(),
            self.interceptability.is_some(),
            self.drift.is_some(),
            self.flood.is_some(),
        ];
        Experiment::ALL.into_iter().zip(present).filter(|(_, p)| *p).map(|(e, _)| e).collect()
    }

    /// Hex SHA-256 of the effective config (after overrides).
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn world_config(&self) -> WorldConfig {
        let mut w = WorldConfig::swarm(self.seed).with_posture(self.posture);
        if !self.agents.is_empty() {
            w.agents = self.agents.clone();
        }
        if !self.devices.is_empty() {
            w.devices = self.devices.clone();
        }
        w.profiles = self.profiles.clone();
        for (h, addrs) in &self.hosts {
            w.hosts.insert(h.clone(), addrs.clone());
        }
        if let Some(m) = self.trust_mode {
            w.trust_mode = m;
        }
        if let Some(m) = self.state_mode {
            w.state_mode = m;
        }
        if let Some(c) = self.boundary.cloud_fallback {
            w.boundary.cloud_fallback = c;
        }
        w.boundary.sensitive_labels = self.boundary.sensitive_labels.clone();
        w.distrust_threshold = self.distrust_threshold.unwrap_or(DEFAULT_DISTRUST_THRESHOLD);
        w.dns_queries_per_call = self.dns_queries_per_call.unwrap_or(DEFAULT_DNS_QUERIES_PER_CALL);
        if let Some(o) = self.oob {
            w.oob = o;
        }
        if let Some(r) = self.reconnect {
            w.reconnect = r;
        }
        w.heartbeats_until_us = self.duration_us;
        if self.archetype == Archetype::CloudHosted {
            // no model on the device: every inference call leaves the mesh
            for a in &mut w.agents {
                if let Some(chain) = &mut a.inference {
                    chain.local = None;
                }
            }
        }
        w
    }
}

/// Every referential and range check, collected rather than stopping at the first.
pub fn validate(cfg: &ScenarioConfig) -> Vec<ConfigError> {
    let mut errs = Vec::new();
    let w = cfg.world_config();
    if cfg.name.trim().is_empty() {
        errs.push(ConfigError::new("name", "must not be empty"));
    }

    let orchestrators = w.agents.iter().filter(|a| a.role == Role::Orchestrator).count();
    if orchestrators != 1 {
        errs.push(ConfigError::new(
            "agents",
            format!("exactly one orchestrator required, found {orchestrators}"),
        ));
    }
    let reserved = [OPERATOR, MONITOR, ROGUE];
    let mut seen = BTreeSet::new();
    for (i, a) in w.agents.iter().enumerate() {
        if !seen.insert(a.id.clone()) {
            errs.push(ConfigError::new(format!("agents[{i}].id"), format!("duplicate agent id {:?}", a.id.as_str())));
        }
        if reserved.contains(&a.id.as_str()) {
            errs.push(ConfigError::new(format!("agents[{i}].id"), format!("{:?} is reserved", a.id.as_str())));
        }
        if let Some(link) = &a.link {
            if w.profile(link).is_none() {
                errs.push(ConfigError::new(format!("agents[{i}].link"), format!("unknown link profile {link:?}")));
            }
        }
        if a.heartbeat_interval_us == Some(0) {
            errs.push(ConfigError::new(format!("agents[{i}].heartbeat_interval_us"), "must be positive"));
        }
        if let Some(inf) = &a.inference {
            if inf.context_capacity_bytes == 0 {
                errs.push(ConfigError::new(
                    format!("agents[{i}].inference.context_capacity_bytes"),
                    "must be positive",
                ));
            }
            if let Some(host) = &inf.cloud {
                if w.hosts.get(host).is_none_or(Vec::is_empty) {
                    errs.push(ConfigError::new(
                        format!("agents[{i}].inference.cloud"),
                        format!("host {host:?} has no addresses in [hosts]"),
                    ));
                }
            }
        }
    }
    let mut device_ids = BTreeSet::new();
    for (i, d) in w.devices.iter().enumerate() {
        if !device_ids.insert(d.id.clone()) {
            errs.push(ConfigError::new(format!("devices[{i}].id"), format!("duplicate device id {:?}", d.id)));
        }
        if d.actuation_duration_us == Some(0) {
            errs.push(ConfigError::new(format!("devices[{i}].actuation_duration_us"), "must be positive"));
        }
        if Topic::actuate(&d.id).leaf() != d.id {
            errs.push(ConfigError::new(format!("devices[{i}].id"), "must be a single topic segment"));
        }
    }
    let mut profile_names = BTreeSet::new();
    for (i, p) in cfg.profiles.iter().enumerate() {
        if !profile_names.insert(p.name.clone()) {
            errs.push(ConfigError::new(format!("profiles[{i}].name"), format!("duplicate profile {:?}", p.name)));
        }
        if let Err(e) = p.validate() {
            errs.push(ConfigError::new(format!("profiles[{i}]"), e.to_string()));
        }
    }
    if let Some(r) = &cfg.reconnect {
        if !(r.mean_us > 0.0 && r.stddev_us >= 0.0 && r.mean_us.is_finite() && r.stddev_us.is_finite()) {
            errs.push(ConfigError::new("reconnect", "mean must be positive and stddev non-negative"));
        }
    }
    for (h, addrs) in &cfg.hosts {
        if addrs.is_empty() {
            errs.push(ConfigError::new(format!("hosts.{h}"), "needs at least one address"));
        }
    }

    let linked = |id: &str| w.agents.iter().any(|a| a.id.as_str() == id && a.link.is_some());
    let is_agent = |id: &str| w.agents.iter().any(|a| a.id.as_str() == id);
    let has_device = |d: &str| device_ids.contains(d);
    let has_bridge = w.agents.iter().any(|a| a.role == Role::Bridge);

    let check_params = |errs: &mut Vec<ConfigError>, path: &str, device: &str, plan: &PartitionPlan| {
        if !has_device(device) {
            errs.push(ConfigError::new(format!("{path}.device"), format!("unknown device {device:?}")));
        }
        if let Some(l) = &plan.link {
            if !linked(l) {
                errs.push(ConfigError::new(
                    format!("{path}.partition.link"),
                    format!("{l:?} is not an agent with a link"),
                ));
            }
        } else if !w.agents.iter().any(|a| a.role == Role::Bridge && a.link.is_some()) {
            errs.push(ConfigError::new(format!("{path}.partition.link"), "bridge has no link to partition"));
        }
        if plan.duration_us == 0 {
            errs.push(ConfigError::new(format!("{path}.partition.duration_us"), "must be positive"));
        }
    };
    if let Some(s) = &cfg.attack_suite {
        check_params(&mut errs, "attack_suite.params", &s.params.device, &s.params.partition);
    }
    if let Some(s) = &cfg.failover {
        check_params(&mut errs, "failover", &s.device, &s.partition);
    }
    if let Some(s) = &cfg.cooperative {
        for (i, d) in s.devices.iter().flatten().enumerate() {
            if !has_device(d) {
                errs.push(ConfigError::new(format!("cooperative.devices[{i}]"), format!("unknown device {d:?}")));
            }
        }
        if !has_bridge {
            errs.push(ConfigError::new("cooperative", "needs a bridge agent"));
        }
    }
    if let Some(s) = &cfg.latency {
        for (i, t) in s.targets.iter().enumerate() {
            if !is_agent(t) {
                errs.push(ConfigError::new(format!("latency.targets[{i}]"), format!("unknown agent {t:?}")));
            }
        }
        if s.probes == 0 {
            errs.push(ConfigError::new("latency.probes", "must be positive"));
        }
        if s.payload_bytes.contains(&0) {
            errs.push(ConfigError::new("latency.payload_bytes", "sizes must be positive"));
        }
    }
    let mobile = w.agents.iter().any(|a| a.role == Role::Mobile);
    if cfg.fallback.is_some() && !mobile {
        errs.push(ConfigError::new("fallback", "needs a mobile agent"));
    }
    if cfg.egress.as_ref().is_some_and(|e| e.api_calls > 0) && !mobile {
        errs.push(ConfigError::new("egress.api_calls", "needs a mobile agent"));
    }
    if let Some(s) = &cfg.drift {
        if s.writers > 2 {
            errs.push(ConfigError::new("drift.writers", "at most 2 writers"));
        }
        if w.agents.len() < 2 {
            errs.push(ConfigError::new("drift", "needs two agents"));
        }
    }
    errs
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid scenario")]
    Invalid(Vec<ConfigError>),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Logs collected from one experiment world.
#[derive(Debug, Clone, Default)]
pub struct SectionLogs {
    pub section: String,
    pub trace: Trace,
    pub broker: String,
    pub egress: String,
    pub dns: String,
}

impl SectionLogs {
    fn of(section: impl Into<String>, w: &World) -> Self {
        Self {
            section: section.into(),
            trace: w.trace.clone(),
            broker: w.broker.export_log(),
            egress: w.ledger.to_jsonl(),
            dns: w.dns.to_jsonl(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub report: Report,
    pub sections: Vec<SectionLogs>,
}

fn fresh(cfg: &WorldConfig) -> Result<World, RunError> {
    Ok(World::new(cfg.clone())?)
}

fn finish(w: &mut World, duration_us: u64) {
    if w.now_us() < duration_us {
        w.run_until(duration_us);
    }
}

fn run_suite_section(cfg: &ScenarioConfig, s: &AttackSuiteSection, out: &mut RunOutput) -> Result<(), RunError> {
    let wc = cfg.world_config();
    let kinds = s.kinds.clone().unwrap_or_else(|| AttackKind::ALL.to_vec());
    let mut rows = Vec::new();
    for kind in kinds {
        let mut w = fresh(&wc)?;
        let outcome = run_attack(kind, &s.params, &mut w)?;
        finish(&mut w, cfg.duration_us);
        rows.push(outcome.to_row());
        out.sections.push(SectionLogs::of(format!("attack_suite/{kind}"), &w));
    }
    out.report.attacks = Some(rows);
    Ok(())
}

fn devices_or_all(w: &WorldConfig, subset: &Option<Vec<String>>) -> Vec<(String, DeviceKind)> {
    w.devices
        .iter()
        .filter(|d| subset.as_ref().is_none_or(|s| s.contains(&d.id)))
        .map(|d| (d.id.clone(), d.kind))
        .collect()
}

fn action_for(kind: DeviceKind, i: usize) -> &'static str {
    let pair = match kind {
        DeviceKind::Lock => ["lock", "unlock"],
        DeviceKind::Valve => ["open", "close"],
        DeviceKind::Sensor => ["read", "read"],
        DeviceKind::Light | DeviceKind::Switch | DeviceKind::Relay => ["on", "off"],
    };
    pair[i % 2]
}

fn run_cooperative(cfg: &ScenarioConfig, s: &CooperativeSection, out: &mut RunOutput) -> Result<(), RunError> {
    let wc = cfg.world_config();
    let devices = devices_or_all(&wc, &s.devices);
    let mut w = fresh(&wc)?;
    for i in 0..s.commands {
        let (device, kind) = &devices[i % devices.len()];
        w.issue_command(device, action_for(*kind, i / devices.len()))?;
        w.run_for(s.interval_us);
    }
    w.run_for(5_000_000);
    finish(&mut w, cfg.duration_us);
    out.report.provenance = Some(provenance_audit(&w.mirror_wrappers()));
    out.sections.push(SectionLogs::of("cooperative", &w));
    Ok(())
}

fn run_latency(cfg: &ScenarioConfig, s: &LatencySection, out: &mut RunOutput) -> Result<(), RunError> {
    let wc = cfg.world_config();
    let mut rows = Vec::new();
    for target in &s.targets {
        let target_id = AgentId::new(target.clone()).map_err(WorldError::from)?;
        let profile = wc
            .agents
            .iter()
            .find(|a| a.id == target_id)
            .and_then(|a| a.link.clone())
            .unwrap_or_else(|| "co-located".into());
        for &size in &s.payload_bytes {
            let mut w = fresh(&wc)?;
            let r = w.run_echo_benchmark(&target_id, size, s.probes, s.timeout_us);
            finish(&mut w, cfg.duration_us);
            rows.push(LatencyRow {
                profile: profile.clone(),
                payload_bytes: size,
                timeouts: r.timeouts,
                stats: summarize(&r.samples).ok(),
            });
            out.sections.push(SectionLogs::of(format!("latency/{target}/{size}"), &w));
        }
    }
    out.report.latency = Some(rows);
    Ok(())
}

fn run_egress(cfg: &ScenarioConfig, s: &EgressSection, out: &mut RunOutput) -> Result<(), RunError> {
    let wc = cfg.world_config();
    let mut w = fresh(&wc)?;
    let orch = w.orchestrator().clone();
    let bridge = w.bridge().cloned();
    let mobile = w.first_with_role(Role::Mobile);
    let sensors: Vec<String> = wc.devices.iter().map(|d| d.id.clone()).collect();
    let lights: Vec<String> = wc
        .devices
        .iter()
        .filter(|d| d.kind == DeviceKind::Light)
        .map(|d| d.id.clone())
        .collect();
    let mut ops = 0u64;

    for i in 0..s.mqtt_publishes {
        let c = CorrelationId::random(w.rng());
        let body = serde_json::json!({ "kind": "note", "seq": i }).to_string().into_bytes();
        let env = Envelope::new(orch.clone(), MsgType::Status, w.now_us(), c, body);
        w.agent_publish(&orch, Topic::broadcast(), env, false);
        w.run_for(s.interval_us);
        ops += 1;
    }
    if let Some(bridge) = &bridge {
        for i in 0..s.sensor_reads {
            let device = &sensors[i as usize % sensors.len().max(1)];
            let c = CorrelationId::random(w.rng());
            let body = serde_json::json!({ "device": device, "reading": i }).to_string().into_bytes();
            let env = Envelope::new(bridge.clone(), MsgType::Status, w.now_us(), c, body);
            w.agent_publish(bridge, Topic::sensor(device), env, false);
            w.run_for(s.interval_us);
            ops += 1;
        }
        for i in 0..s.light_commands {
            let Some(light) = lights.get(i as usize % lights.len().max(1)) else { break };
            w.issue_command(light, if i % 2 == 0 { "on" } else { "off" })?;
            w.run_for(s.interval_us);
            ops += 1;
        }
    }
    if let Some(mobile) = &mobile {
        for _ in 0..s.api_calls {
            w.orchestrator_command(
                mobile,
                &CommandBody::Analyze {
                    request_bytes: s.api_request_bytes,
                    label: None,
                },
            );
            w.run_for(s.interval_us.max(1_000_000));
            ops += 1;
        }
    }
    finish(&mut w, cfg.duration_us);
    out.report.egress = Some(vec![EgressRow {
        architecture: cfg.archetype.to_string(),
        operations: ops,
        report: w.egress_report(),
    }]);
    out.sections.push(SectionLogs::of("egress", &w));
    Ok(())
}

fn policy_name(p: CloudFallback) -> &'static str {
    match p {
        CloudFallback::Forbid => "forbid",
        CloudFallback::AllowSilent => "allow_silent",
        CloudFallback::AllowWithMarker => "allow_with_marker",
    }
}

fn run_fallback(cfg: &ScenarioConfig, s: &FallbackSection, out: &mut RunOutput) -> Result<(), RunError> {
    let base = cfg.world_config();
    let policies = if s.policies.is_empty() {
        vec![base.boundary.cloud_fallback]
    } else {
        s.policies.clone()
    };
    let params = AttackParams {
        fallback_request_bytes: s.request_bytes,
        ..AttackParams::default()
    };
    let mut rows = Vec::new();
    for p in policies {
        let mut wc = base.clone();
        wc.boundary.cloud_fallback = p;
        let mut w = fresh(&wc)?;
        run_attack(AttackKind::InducedFallback, &params, &mut w)?;
        finish(&mut w, cfg.duration_us);
        let obs = w.mirror_observations();
        let report = w.egress_report();
        let visible: BTreeSet<_> = w.crossings().into_iter().flat_map(|c| c.visible_at).collect();
        rows.push(SovereigntyRow {
            policy: policy_name(p).into(),
            request_bytes: s.request_bytes,
            egress_entries: w.ledger.len(),
            egress_bytes: report.total_bytes,
            dns_queries: w.dns.len(),
            resolved: w
                .dns
                .events()
                .iter()
                .map(|e| e.address.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            markers: obs.markers.len(),
            coordination_anomalies: obs.anomalies.len(),
            visible_at: visible.into_iter().collect(),
        });
        out.sections.push(SectionLogs::of(format!("fallback/{}", policy_name(p)), &w));
    }
    out.report.sovereignty = Some(rows);
    Ok(())
}

fn run_failover(cfg: &ScenarioConfig, s: &FailoverSectionConfig, out: &mut RunOutput) -> Result<(), RunError> {
    let wc = cfg.world_config();
    let mut w = fresh(&wc)?;
    let params = AttackParams {
        partition: s.partition.clone(),
        command_lead_us: s.command_lead_us,
        device: s.device.clone(),
        ..AttackParams::default()
    };
    let outcome = run_attack(AttackKind::PartitionBlackout, &params, &mut w)?;
    finish(&mut w, cfg.duration_us);
    let decomposition = serde_json::from_value(outcome.evidence["decomposition"].clone())
        .map_err(|e| RunError::Invariant(format!("decomposition missing: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0xfa11);
    let samples: Vec<u64> = (0..s.reconnect_samples).map(|_| wc.reconnect.sample(&mut rng)).collect();
    out.report.failover = Some(FailoverSection {
        decomposition,
        gap: w.gap_report(),
        reconnect: summarize(&samples).ok(),
    });
    out.sections.push(SectionLogs::of("failover", &w));
    Ok(())
}

fn run_interceptability(cfg: &ScenarioConfig, s: &InterceptabilitySection, out: &mut RunOutput) -> Result<(), RunError> {
    let wc = cfg.world_config();
    let devices = devices_or_all(&wc, &None);
    let mut w = fresh(&wc)?;
    for i in 0..s.commands_per_device {
        for (device, kind) in &devices {
            w.issue_command(device, action_for(*kind, i))?;
            w.run_for(s.interval_us);
        }
    }
    w.run_for(5_000_000);
    finish(&mut w, cfg.duration_us);
    out.report.interceptability = Some(w.gap_report());
    out.sections.push(SectionLogs::of("interceptability", &w));
    Ok(())
}

fn mode_name(m: StateMode) -> &'static str {
    match m {
        StateMode::Embedded => "embedded",
        StateMode::StatePlane => "state_plane",
    }
}

fn run_drift(cfg: &ScenarioConfig, s: &DriftSection, out: &mut RunOutput) -> Result<(), RunError> {
    let params = AttackParams {
        drift_writers: s.writers,
        ..AttackParams::default()
    };
    let mut rows = Vec::new();
    for &mode in &s.modes {
        let mut wc = cfg.world_config();
        wc.state_mode = mode;
        let mut w = fresh(&wc)?;
        let o = run_attack(AttackKind::EmbeddedStateDrift, &params, &mut w)?;
        finish(&mut w, cfg.duration_us);
        let num = |k: &str| o.evidence.get(k).and_then(serde_json::Value::as_u64).unwrap_or(0) as usize;
        rows.push(DriftRow {
            mode: mode_name(mode).into(),
            writers: s.writers as u32,
            divergent_copies: num("divergent_copies"),
            conflicts: num("conflicts"),
        });
        out.sections.push(SectionLogs::of(format!("drift/{}", mode_name(mode)), &w));
    }
    out.report.drift = Some(rows);
    Ok(())
}

fn run_flood(cfg: &ScenarioConfig, s: &FloodSection, out: &mut RunOutput) -> Result<(), RunError> {
    let params = AttackParams {
        flood_k: s.k,
        ..AttackParams::default()
    };
    let mut rows = Vec::new();
    for &posture in &s.postures {
        let mut sc = cfg.clone();
        sc.override_posture(posture);
        let mut w = fresh(&sc.world_config())?;
        let o = run_attack(AttackKind::ForgedFlood, &params, &mut w)?;
        finish(&mut w, cfg.duration_us);
        let flag = |k: &str| o.evidence.get(k).and_then(serde_json::Value::as_bool).unwrap_or(false);
        let lockout: LockoutReport = o
            .evidence
            .get("lockout")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| RunError::Invariant("orchestrator has no trust state".into()))?;
        rows.push(TrustRow {
            mode: posture.to_string(),
            forged: s.k,
            legitimate_obeyed: flag("first_attempt_obeyed"),
            required_oob: flag("required_oob"),
            lockout,
        });
        out.sections.push(SectionLogs::of(format!("flood/{posture}"), &w));
    }
    out.report.trust = Some(rows);
    Ok(())
}

/// Runs `experiments` (defaults filled in for sections the file omits).
pub fn run_experiments(cfg: &ScenarioConfig, experiments: &[Experiment]) -> Result<RunOutput, RunError> {
    let errs = validate(cfg);
    if !errs.is_empty() {
        return Err(RunError::Invalid(errs));
    }
    let mut out = RunOutput {
        config: cfg.clone(),
        report: Report::new(&cfg.name, cfg.seed, &cfg.posture.to_string()),
        sections: Vec::new(),
    };
    for e in experiments {
        match e {
            Experiment::AttackSuite => run_suite_section(cfg, &cfg.attack_suite.clone().unwrap_or_default(), &mut out)?,
            Experiment::Cooperative => run_cooperative(cfg, &cfg.cooperative.clone().unwrap_or_default(), &mut out)?,
            Experiment::Latency => run_latency(cfg, &cfg.latency.clone().unwrap_or_default(), &mut out)?,
            Experiment::Egress => run_egress(cfg, &cfg.egress.clone().unwrap_or_default(), &mut out)?,
            Experiment::Fallback => run_fallback(cfg, &cfg.fallback.clone().unwrap_or_default(), &mut out)?,
            Experiment::Failover => run_failover(cfg, &cfg.failover.clone().unwrap_or_default(), &mut out)?,
            Experiment::Interceptability => {
                run_interceptability(cfg, &cfg.interceptability.clone().unwrap_or_default(), &mut out)?
            }
            Experiment::Drift => run_drift(cfg, &cfg.drift.clone().unwrap_or_default(), &mut out)?,
            Experiment::Flood => run_flood(cfg, &cfg.flood.clone().unwrap_or_default(), &mut out)?,
        }
    }
    check_invariants(&out)?;
    Ok(out)
}

/// Runs whatever experiments the file configures; an attack-free idle run
/// to `duration_us` if it configures none.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, RunError> {
    let experiments = cfg.experiments();
    if experiments.is_empty() {
        let errs = validate(cfg);
        if !errs.is_empty() {
            return Err(RunError::Invalid(errs));
        }
        let mut w = fresh(&cfg.world_config())?;
        finish(&mut w, cfg.duration_us);
        let out = RunOutput {
            config: cfg.clone(),
            report: Report::new(&cfg.name, cfg.seed, &cfg.posture.to_string()),
            sections: vec![SectionLogs::of("idle", &w)],
        };
        check_invariants(&out)?;
        return Ok(out);
    }
    run_experiments(cfg, &experiments)
}

fn check_invariants(out: &RunOutput) -> Result<(), RunError> {
    for s in &out.sections {
        if !s.trace.is_monotonic() {
            return Err(RunError::Invariant(format!("trace for {} is not time-ordered", s.section)));
        }
    }
    check_report(&out.report).map_err(RunError::Invariant)
}

/// Internal consistency of a finished report, also applied to reports
/// loaded back from disk.
pub fn check_report(report: &Report) -> Result<(), String> {
    if let Some(f) = &report.failover {
        if !f.decomposition.is_additive() {
            return Err(format!(
                "blackout {} us does not equal its phase sum {} us",
                f.decomposition.total_blackout_us,
                f.decomposition.phase_sum_us()
            ));
        }
    }
    if let Some(p) = &report.provenance {
        for (field, cov) in p.fields() {
            if !(0.0..=1.0).contains(&cov) {
                return Err(format!("coverage of {field} out of range: {cov}"));
            }
        }
    }
    let ordered = |s: &crate::metrics::SummaryStats| {
        s.min_us <= s.median_us && s.median_us <= s.p95_us && s.p95_us <= s.p99_us && s.p99_us <= s.max_us
    };
    let latency = report.latency.iter().flatten().filter_map(|r| r.stats.as_ref());
    let gaps = report.interceptability.iter().filter_map(|g| g.stats.as_ref());
    if latency.chain(gaps).any(|s| !ordered(s)) {
        return Err("percentiles out of order".into());
    }
    Ok(())
}

/// Names and digests of what a run wrote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub seed: u64,
    pub posture: String,
    pub config_digest: String,
    /// Artifact file name to hex SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

pub const TRACE_FILE: &str = "trace.jsonl";
pub const BROKER_FILE: &str = "broker.jsonl";
pub const EGRESS_FILE: &str = "egress.jsonl";
pub const DNS_FILE: &str = "dns.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

fn tagged(section: &str, jsonl: &str, out: &mut String) {
    let tag = serde_json::to_string(section).expect("string serializes");
    for line in jsonl.lines().filter(|l| !l.is_empty()) {
        out.push_str(&format!("{{\"section\":{tag},\"entry\":{line}}}\n"));
    }
}

impl RunOutput {
    /// Artifact name to contents, in a fixed order.
    pub fn artifacts(&self) -> BTreeMap<&'static str, String> {
        let (mut trace, mut broker, mut egress, mut dns) = (String::new(), String::new(), String::new(), String::new());
        for s in &self.sections {
            tagged(&s.section, &s.trace.to_jsonl(), &mut trace);
            tagged(&s.section, &s.broker, &mut broker);
            tagged(&s.section, &s.egress, &mut egress);
            tagged(&s.section, &s.dns, &mut dns);
        }
        BTreeMap::from([
            (TRACE_FILE, trace),
            (BROKER_FILE, broker),
            (EGRESS_FILE, egress),
            (DNS_FILE, dns),
            (REPORT_JSON, self.report.to_json()),
            (REPORT_TXT, render_report(&self.report)),
        ])
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            scenario: self.config.name.clone(),
            seed: self.config.seed,
            posture: self.config.posture.to_string(),
            config_digest: self.config.digest(),
            artifacts: self
                .artifacts()
                .into_iter()
                .map(|(k, v)| (k.to_string(), hex::encode(Sha256::digest(v.as_bytes()))))
                .collect(),
        }
    }

    /// Writes every artifact plus the manifest under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<RunManifest, RunError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| RunError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, body) in self.artifacts() {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io(&p))?;
        }
        let manifest = self.manifest();
        let p = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&p, text).map_err(io(&p))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
seed = 3
"#;

    #[test]
    fn minimal_config_is_valid() {
        let cfg = ScenarioConfig::parse(MINIMAL).unwrap();
        assert!(validate(&cfg).is_empty(), "{:?}", validate(&cfg));
        assert!(cfg.experiments().is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ScenarioConfig::parse("name = \"t\"\npostur = \"hardened\"\n").unwrap_err();
        assert!(err.message.contains("postur"), "{err}");
        let err = ScenarioConfig::parse("name = \"t\"\n[latency]\nprobez = 3\n").unwrap_err();
        assert!(err.message.contains("probez"), "{err}");
    }

    #[test]
    fn two_orchestrators_reported() {
        let text = r#"
name = "t"
[[agents]]
id = "a"
role = "orchestrator"
[[agents]]
id = "b"
role = "orchestrator"
"#;
        let errs = validate(&ScenarioConfig::parse(text).unwrap());
        assert!(errs.iter().any(|e| e.message.contains("exactly one orchestrator")), "{errs:?}");
    }

    #[test]
    fn unknown_profile_has_path() {
        let text = r#"
name = "t"
[[agents]]
id = "a"
role = "orchestrator"
[[agents]]
id = "b"
role = "bridge"
link = "smoke-signals"
"#;
        let errs = validate(&ScenarioConfig::parse(text).unwrap());
        assert!(errs.iter().any(|e| e.path == "agents[1].link"), "{errs:?}");
    }

    #[test]
    fn posture_override_clears_explicit_modes() {
        let mut cfg = ScenarioConfig::parse("name = \"t\"\nstate_mode = \"embedded\"\n").unwrap();
        cfg.override_posture(Posture::Hardened);
        let w = cfg.world_config();
        assert_eq!(w.state_mode, StateMode::StatePlane);
        assert_eq!(w.trust_mode, TrustMode::Hardened);
        assert_eq!(w.boundary.cloud_fallback, CloudFallback::AllowWithMarker);
    }

    #[test]
    fn idle_run_is_deterministic() {
        let mut cfg = ScenarioConfig::parse(MINIMAL).unwrap();
        cfg.duration_us = 3_000_000;
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.artifacts(), b.artifacts());
        assert_eq!(a.manifest(), b.manifest());
    }
}
