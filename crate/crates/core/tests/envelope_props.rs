use edgeswarm::envelope::{
    sign_envelope, verify_envelope, AgentId, Codec, CorrelationId, CounterState, DecodeMode, Envelope,
    EnvelopeError, Keystore, MsgType, RejectionReason, ReplayState, VerificationResult,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn agent_id() -> impl Strategy<Value = AgentId> {
    "[a-z][a-z0-9_-]{0,11}".prop_map(|s| AgentId::new(s).expect("valid id"))
}

fn envelope() -> impl Strategy<Value = Envelope> {
    (
        agent_id(),
        proptest::sample::select(MsgType::ALL.to_vec()),
        any::<u64>(),
        any::<u128>(),
        proptest::collection::vec(any::<u8>(), 0..256),
    )
        .prop_map(|(s, t, ts, c, p)| Envelope::new(s, t, ts, CorrelationId(c), p))
}

fn keystore_for(sender: &AgentId) -> Keystore {
    let mut ks = Keystore::new();
    ks.insert("k1", sender.clone(), b"0123456789abcdef0123456789abcdef".to_vec());
    ks
}

proptest! {
    #[test]
    fn encode_decode_roundtrip(env in envelope()) {
        let codec = Codec::default();
        let bytes = codec.encode(&env, None).unwrap();
        let (back, auth) = codec.decode(&bytes, DecodeMode::Strict).unwrap();
        prop_assert_eq!(back, env);
        prop_assert!(auth.is_none());
    }

    #[test]
    fn signed_roundtrip_verifies_once(env in envelope(), seed in any::<u64>()) {
        let sender = env.sender.clone().unwrap();
        let ks = keystore_for(&sender);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let auth = sign_envelope(&env, "k1", &ks, &mut rng, &mut CounterState::new()).unwrap();
        let codec = Codec::default();
        let bytes = codec.encode(&env, Some(&auth)).unwrap();
        let (back, back_auth) = codec.decode(&bytes, DecodeMode::Strict).unwrap();
        prop_assert_eq!(back_auth.as_ref(), Some(&auth));
        let mut replay = ReplayState::new();
        prop_assert_eq!(verify_envelope(&back, back_auth.as_ref(), &ks, &mut replay), VerificationResult::Verified);
        prop_assert_eq!(
            verify_envelope(&back, back_auth.as_ref(), &ks, &mut replay),
            VerificationResult::Rejected(RejectionReason::ReplayedNonce)
        );
    }

    #[test]
    fn any_field_mutation_breaks_the_signature(env in envelope(), which in 0usize..5, flip in 1u8..=255) {
        let sender = env.sender.clone().unwrap();
        let mut ks = keystore_for(&sender);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let auth = sign_envelope(&env, "k1", &ks, &mut rng, &mut CounterState::new()).unwrap();
        let mut bad = env.clone();
        match which {
            0 => bad.timestamp_us ^= flip as u64,
            1 => bad.correlation_id = bad.correlation_id.map(|c| CorrelationId(c.0 ^ flip as u128)),
            2 => bad.payload.push(flip),
            3 => {
                bad.msg_type = MsgType::ALL.into_iter().find(|t| *t != env.msg_type).unwrap();
            }
            _ => {
                let other = AgentId::new(format!("{}x", sender.as_str())).unwrap();
                ks.insert("k1", other.clone(), b"0123456789abcdef0123456789abcdef".to_vec());
                bad.sender = Some(other);
            }
        }
        let verdict = verify_envelope(&bad, Some(&auth), &ks, &mut ReplayState::new());
        prop_assert_eq!(verdict, VerificationResult::Rejected(RejectionReason::BadSignature));
    }

    #[test]
    fn tampered_signature_is_rejected(env in envelope(), byte in 0usize..32, flip in 1u8..=255) {
        let sender = env.sender.clone().unwrap();
        let ks = keystore_for(&sender);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut auth = sign_envelope(&env, "k1", &ks, &mut rng, &mut CounterState::new()).unwrap();
        auth.signature[byte] ^= flip;
        let verdict = verify_envelope(&env, Some(&auth), &ks, &mut ReplayState::new());
        prop_assert_eq!(verdict, VerificationResult::Rejected(RejectionReason::BadSignature));
    }

    #[test]
    fn counters_must_increase(env in envelope()) {
        let sender = env.sender.clone().unwrap();
        let ks = keystore_for(&sender);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counters = CounterState::new();
        let first = sign_envelope(&env, "k1", &ks, &mut rng, &mut counters).unwrap();
        let second = sign_envelope(&env, "k1", &ks, &mut rng, &mut counters).unwrap();
        let mut replay = ReplayState::new();
        prop_assert!(verify_envelope(&env, Some(&second), &ks, &mut replay).is_verified());
        prop_assert_eq!(
            verify_envelope(&env, Some(&first), &ks, &mut replay),
            VerificationResult::Rejected(RejectionReason::StaleCounter)
        );
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let _ = Codec::default().decode(&bytes, DecodeMode::Lenient);
    }
}

#[test]
fn unsigned_and_unknown_key_are_distinguished() {
    let sender = AgentId::new("percy").unwrap();
    let env = Envelope::new(sender.clone(), MsgType::Status, 1, CorrelationId(1), b"{}".to_vec());
    let ks = keystore_for(&sender);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let auth = sign_envelope(&env, "k1", &ks, &mut rng, &mut CounterState::new()).unwrap();
    assert_eq!(
        verify_envelope(&env, None, &ks, &mut ReplayState::new()).reason(),
        Some(RejectionReason::MissingAuth)
    );
    assert_eq!(
        verify_envelope(&env, Some(&auth), &Keystore::new(), &mut ReplayState::new()).reason(),
        Some(RejectionReason::UnknownKey)
    );
}

#[test]
fn oversized_payload_is_refused() {
    let env = Envelope::new(AgentId::new("percy").unwrap(), MsgType::Status, 0, CorrelationId(0), vec![0; 65]);
    assert!(matches!(
        Codec::new(64).encode(&env, None),
        Err(EnvelopeError::PayloadTooLarge { len: 65, max: 64 })
    ));
}

#[test]
fn strict_decoding_requires_sender() {
    let codec = Codec::default();
    let mut env = Envelope::new(AgentId::new("percy").unwrap(), MsgType::Command, 0, CorrelationId(9), vec![]);
    env.sender = None;
    let bytes = codec.encode(&env, None).unwrap();
    assert!(matches!(
        codec.decode(&bytes, DecodeMode::Strict),
        Err(EnvelopeError::MissingField("sender"))
    ));
    let (lenient, _) = codec.decode(&bytes, DecodeMode::Lenient).unwrap();
    assert_eq!(lenient.sender, None);
}
