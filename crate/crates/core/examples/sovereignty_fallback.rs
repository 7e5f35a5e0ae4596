//! An oversized request pushes the phone's inference to the cloud. Compare what
//! each boundary policy lets through and who can tell.
//!
//! cargo run --example sovereignty_fallback

use edgeswarm::attacks::{run_attack, AttackKind, AttackParams};
use edgeswarm::sovereignty::CloudFallback;
use edgeswarm::world::{World, WorldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for policy in [CloudFallback::AllowSilent, CloudFallback::AllowWithMarker, CloudFallback::Forbid] {
        let mut cfg = WorldConfig::swarm(5);
        cfg.boundary.cloud_fallback = policy;
        let mut world = World::new(cfg)?;
        run_attack(AttackKind::InducedFallback, &AttackParams::default(), &mut world)?;
        let obs = world.mirror_observations();
        println!("{policy:?}");
        println!("  egress entries {}  bytes {}", world.ledger.len(), world.egress_report().total_bytes);
        println!("  dns queries    {}", world.dns.len());
        println!("  mirror markers {}  anomalies {}", obs.markers.len(), obs.anomalies.len());
        for c in world.crossings() {
            println!("  crossing {} -> {} visible at {:?}", c.agent, c.destination, c.visible_at);
        }
    }
    Ok(())
}
