//! Echo-probe benchmark over the calibrated mesh-VPN profile, plus a
//! zero-jitter control where every round trip is exactly twice the base.
//!
//! cargo run --example echo_latency

use edgeswarm::envelope::AgentId;
use edgeswarm::metrics::summarize;
use edgeswarm::netsim::LinkProfile;
use edgeswarm::world::{World, WorldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let percy = AgentId::new("percy")?;
    for size in [50, 1024, 10 * 1024] {
        let mut world = World::new(WorldConfig::swarm(23))?;
        let r = world.run_echo_benchmark(&percy, size, 150, 2_000_000);
        let s = summarize(&r.samples)?;
        println!(
            "tailscale-m4 {size:>6} B: mean {:.1} ms  median {:.1}  p95 {:.1}  p99 {:.1}",
            s.mean_us / 1e3,
            s.median_us as f64 / 1e3,
            s.p95_us as f64 / 1e3,
            s.p99_us as f64 / 1e3
        );
    }

    let mut cfg = WorldConfig::swarm(23);
    cfg.profiles.push(LinkProfile::fixed("flat", 11_800));
    cfg.agent_mut("percy").expect("percy in roster").link = Some("flat".into());
    let mut world = World::new(cfg)?;
    let r = world.run_echo_benchmark(&percy, 50, 10, 1_000_000);
    println!("zero-jitter round trips: {:?}", r.samples);
    Ok(())
}
