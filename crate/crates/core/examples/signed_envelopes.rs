//! Sign an envelope, put it on the wire, verify it, then watch tampering and
//! replay get caught.
//!
//! cargo run --example signed_envelopes

use edgeswarm::envelope::{
    sign_envelope, verify_envelope, AgentId, Codec, CorrelationId, CounterState, DecodeMode, Envelope, Keystore,
    MsgType, ReplayState,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rupert = AgentId::new("rupert")?;
    let mut keys = Keystore::new();
    keys.insert("rupert-k1", rupert.clone(), b"a shared secret for rupert".to_vec());

    let env = Envelope::new(
        rupert,
        MsgType::Command,
        1_000,
        CorrelationId::random(&mut rng),
        br#"{"kind":"actuate","device":"front_door","action":"lock"}"#.to_vec(),
    );
    let mut counters = CounterState::new();
    let auth = sign_envelope(&env, "rupert-k1", &keys, &mut rng, &mut counters)?;
    let codec = Codec::default();
    let wire = codec.encode(&env, Some(&auth))?;
    println!("wire ({} bytes): {}", wire.len(), String::from_utf8_lossy(&wire));

    let mut replay = ReplayState::new();
    let (decoded, auth) = codec.decode(&wire, DecodeMode::Strict)?;
    println!("first delivery:   {:?}", verify_envelope(&decoded, auth.as_ref(), &keys, &mut replay));
    println!("same bytes again: {:?}", verify_envelope(&decoded, auth.as_ref(), &keys, &mut replay));

    let mut tampered = decoded.clone();
    tampered.payload = br#"{"kind":"actuate","device":"front_door","action":"unlock"}"#.to_vec();
    println!("tampered payload: {:?}", verify_envelope(&tampered, auth.as_ref(), &keys, &mut ReplayState::new()));
    println!("no auth block:    {:?}", verify_envelope(&decoded, None, &keys, &mut ReplayState::new()));
    Ok(())
}
