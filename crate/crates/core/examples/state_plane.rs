//! Compare-and-swap commits on the versioned state plane: the loser of a race
//! gets a conflict report instead of silently overwriting.
//!
//! cargo run --example state_plane

use std::collections::BTreeMap;

use edgeswarm::envelope::AgentId;
use edgeswarm::stateplane::{CommitOutcome, Store};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (rupert, percy) = (AgentId::new("rupert")?, AgentId::new("percy")?);
    let mut store = Store::new();
    store.register_author(rupert.clone());
    store.register_author(percy.clone());
    store.create_ref("shared")?;

    let set = |v: &str| BTreeMap::from([("plan".to_string(), Some(v.as_bytes().to_vec()))]);
    let base = store.commit("shared", None, &rupert, 0, &set("dim lights at 22:00"), "seed")?;
    let base = base.commit_id().expect("first commit lands");

    let percy_edit = store.commit("shared", Some(base), &percy, 10, &set("dim lights at 23:00"), "later")?;
    println!("percy:  {:?}", percy_edit.commit_id().map(|c| c.to_hex()[..12].to_string()));

    match store.commit("shared", Some(base), &rupert, 11, &set("dim lights at 21:00"), "earlier")? {
        CommitOutcome::Committed(_) => println!("rupert: committed (unexpected)"),
        CommitOutcome::Conflict(c) => println!("rupert: conflict on {:?}, head moved on", c.paths),
    }
    let head = store.head("shared")?.expect("ref has a head");
    println!("plan at head: {}", String::from_utf8_lossy(store.read_at(&head, "plan")?.unwrap_or_default()));
    println!("history length {}", store.history("shared")?.len());
    Ok(())
}
