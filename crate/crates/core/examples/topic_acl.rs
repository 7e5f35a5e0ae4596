//! Topic wildcards and a least-privilege ACL, evaluated by the broker.
//!
//! cargo run --example topic_acl

use edgeswarm::broker::{Acl, Broker, BrokerPolicy, Topic, TopicFilter};
use edgeswarm::envelope::{AgentId, Keystore};

const RULES: &str = "\
# orchestrator may command devices, bridge may listen for it
rupert publish iot/actuate/+
jeeves subscribe iot/actuate/+
mallory publish agents/inbox/+
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (filter, topic) in [
        ("iot/actuate/+", "iot/actuate/front_door"),
        ("iot/#", "iot/sensor/porch/temp"),
        ("iot/+", "iot/sensor/porch"),
    ] {
        let hit = TopicFilter::new(filter)?.matches(&Topic::new(topic)?);
        println!("{filter:<14} vs {topic:<24} -> {hit}");
    }

    let acl = Acl::parse(RULES)?;
    let mut keys = Keystore::new();
    keys.insert("rupert-k1", AgentId::new("rupert")?, vec![7; 32]);
    let mut policy = BrokerPolicy::hardened(acl, keys)?;

    let mut broker = Broker::new();
    let mallory = broker.connect(AgentId::new("mallory")?);
    let jeeves = broker.connect(AgentId::new("jeeves")?);
    println!("jeeves subscribe iot/actuate/+: {:?}", broker.subscribe(jeeves, TopicFilter::new("iot/actuate/+")?, &policy).granted().is_some());
    println!("mallory subscribe #:            {:?}", broker.subscribe(mallory, TopicFilter::new("#")?, &policy).granted().is_some());

    let rec = broker.publish(mallory, &Topic::actuate("front_door"), b"{}", &mut policy, 0);
    println!("mallory -> iot/actuate/front_door: {}", rec.verdict.label());
    Ok(())
}
