//! Every attack kind against both postures, rendered as one table each.
//!
//! cargo run --example attack_suite

use edgeswarm::attacks::{run_suite, AttackParams};
use edgeswarm::broker::Posture;
use edgeswarm::metrics::{render_report, Report};
use edgeswarm::world::WorldConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for posture in [Posture::Baseline, Posture::Hardened] {
        let cfg = WorldConfig::swarm(42).with_posture(posture);
        let outcomes = run_suite(&cfg, &AttackParams::default())?;
        let mut report = Report::new("attack-suite", 42, &posture.to_string());
        report.attacks = Some(outcomes.iter().map(|o| o.to_row()).collect());
        let text = render_report(&report);
        let table = text.split("\n\n").find(|s| s.contains("Adversarial")).unwrap_or_default();
        println!("[{posture}]\n{table}\n");
        for o in outcomes.iter().filter(|o| o.kind.is_bus_attack()) {
            println!("  {:<22} executions={} audits={}", o.kind.label(), o.executions, o.audit_records);
        }
        println!();
    }
    Ok(())
}
