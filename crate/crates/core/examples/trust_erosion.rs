//! Twenty obvious forgeries make the baseline orchestrator distrust its whole
//! channel; the hardened one never sees them and keeps obeying the operator.
//!
//! cargo run --example trust_erosion

use edgeswarm::attacks::{run_attack, AttackKind, AttackParams};
use edgeswarm::broker::Posture;
use edgeswarm::world::{World, WorldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for posture in [Posture::Baseline, Posture::Hardened] {
        let mut world = World::new(WorldConfig::swarm(9).with_posture(posture))?;
        let o = run_attack(AttackKind::ForgedFlood, &AttackParams::default(), &mut world)?;
        println!("{posture}:");
        for key in ["first_attempt_obeyed", "required_oob", "legitimate_obeyed_eventually", "lockout_us"] {
            println!("  {key:<30} {}", o.evidence[key]);
        }
        println!("  broker verdicts on forgeries: {}", o.broker_response());
    }
    Ok(())
}
