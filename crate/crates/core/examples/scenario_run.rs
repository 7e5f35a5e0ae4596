//! Load a scenario file, run it, and print the report, the same path the
//! command-line tool takes.
//!
//! cargo run --example scenario_run -- scenarios/drift.toml

use std::path::PathBuf;

use edgeswarm::metrics::render_report;
use edgeswarm::scenario::{run, validate, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/drift.toml")));
    let cfg = ScenarioConfig::load(&path)?;
    let errors = validate(&cfg);
    if !errors.is_empty() {
        for e in errors {
            eprintln!("{e}");
        }
        std::process::exit(2);
    }
    let out = run(&cfg)?;
    print!("{}", render_report(&out.report));
    println!("manifest digest of report.json: {}", out.manifest().artifacts["report.json"]);
    Ok(())
}
