//! A supervision monitor on the mirror topic scores how much provenance each
//! command carries. Clean traffic scores 100%; a rogue's sender-less command
//! drags the sender column down.
//!
//! cargo run --example provenance_audit

use edgeswarm::attacks::{run_attack, AttackKind, AttackParams};
use edgeswarm::metrics::provenance_audit;
use edgeswarm::world::{World, WorldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut world = World::new(WorldConfig::swarm(7))?;
    for i in 0..20 {
        world.issue_command("hall_light", if i % 2 == 0 { "on" } else { "off" })?;
        world.run_for(250_000);
    }
    world.run_for(1_000_000);
    print("cooperative", &world);

    run_attack(AttackKind::MissingSender, &AttackParams::default(), &mut world)?;
    print("after missing-sender probe", &world);
    Ok(())
}

fn print(label: &str, world: &World) {
    let audit = provenance_audit(&world.mirror_wrappers());
    println!("{label} ({} commands):", audit.n);
    for (field, coverage) in audit.fields() {
        println!("  {field:<15} {:>6.1}%", coverage * 100.0);
    }
}
