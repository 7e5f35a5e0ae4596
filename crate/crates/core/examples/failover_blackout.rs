//! A door-lock command goes out 1 ms before the bridge's link drops. The lock
//! finishes moving long before anyone can see the audit record.
//!
//! cargo run --example failover_blackout

use edgeswarm::attacks::{run_attack, AttackKind, AttackParams};
use edgeswarm::netsim::ReconnectProfile;
use edgeswarm::world::{World, WorldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = WorldConfig::swarm(31);
    cfg.reconnect = ReconnectProfile::fixed(9_300.0);
    let mut world = World::new(cfg)?;
    let outcome = run_attack(AttackKind::PartitionBlackout, &AttackParams::default(), &mut world)?;
    let d = &outcome.evidence["decomposition"];
    println!("partition        {} us", d["partition_us"]);
    println!("network recovery {} us", d["network_recovery_us"]);
    println!("bridge setup     {} us", d["bridge_setup_us"]);
    println!("reconnect        {} us", d["reconnect_us"]);
    println!("total blackout   {} us", d["total_blackout_us"]);
    println!();
    println!("lock completed at   {} us", outcome.evidence["completed_us"]);
    println!("audit visible at    {} us", outcome.evidence["audit_visible_us"]);
    println!("unaudited actuations: {}", outcome.evidence["unaudited_actuations"]);
    Ok(())
}
