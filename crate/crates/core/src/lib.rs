//! Deterministic simulator of an edge-local agent swarm coordinating over an
//! MQTT-style broker, with the attacks such swarms are exposed to and the
//! hardening that counters them.
//!
//! The layers, bottom up:
//!
//! - [`envelope`]: wire format, canonical encoding, HMAC signing, replay state.
//! - [`broker`]: topics, ACLs, sessions, the supervision mirror.
//! - [`netsim`]: virtual clock, link latency models, partitions.
//! - [`agents`]: orchestrator, mobile and bridge behaviour.
//! - [`trust`], [`stateplane`], [`sovereignty`]: hardened trust assessment,
//!   versioned shared state, cloud-egress accounting.
//! - [`world`]: the event loop tying all of the above together.
//! - [`attacks`]: scripted attack injectors.
//! - [`metrics`]: statistics and report rendering.
//! - [`scenario`]: TOML scenarios, validation, artifact writing.
//!
//! Everything is single-threaded and seeded: the same scenario and seed give
//! byte-identical traces and reports.

pub mod agents;
pub mod attacks;
pub mod broker;
pub mod cli;
pub mod envelope;
pub mod metrics;
pub mod netsim;
pub mod scenario;
pub mod sovereignty;
pub mod stateplane;
pub mod trust;
pub mod world;

pub use attacks::{run_attack, run_suite, AttackKind, AttackOutcome, AttackParams};
pub use broker::Posture;
pub use scenario::{run, validate, ScenarioConfig};
pub use world::{World, WorldConfig};
