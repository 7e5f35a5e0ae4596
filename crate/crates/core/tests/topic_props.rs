use edgeswarm::broker::{Topic, TopicFilter};
use proptest::prelude::*;

/// Straightforward recursive reading of the wildcard rules.
fn oracle(filter: &[&str], topic: &[&str]) -> bool {
    match (filter.split_first(), topic.split_first()) {
        (Some((&"#", _)), _) => true,
        (None, None) => true,
        (Some((&"+", f)), Some((_, t))) => oracle(f, t),
        (Some((a, f)), Some((b, t))) if a == b => oracle(f, t),
        _ => false,
    }
}

fn level() -> impl Strategy<Value = String> {
    proptest::sample::select(vec!["a", "b", "iot", "agents", "x1"]).prop_map(String::from)
}

fn topic() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(level(), 1..6)
}

fn filter() -> impl Strategy<Value = Vec<String>> {
    let seg = prop_oneof![3 => level(), 1 => Just("+".to_string())];
    (proptest::collection::vec(seg, 0..6), any::<bool>()).prop_filter_map("non-empty", |(mut v, multi)| {
        if multi {
            v.push("#".into());
        }
        (!v.is_empty()).then_some(v)
    })
}

proptest! {
    #[test]
    fn matching_agrees_with_oracle(f in filter(), t in topic()) {
        let tf = TopicFilter::new(f.join("/")).unwrap();
        let tt = Topic::new(t.join("/")).unwrap();
        let fs: Vec<&str> = f.iter().map(String::as_str).collect();
        let ts: Vec<&str> = t.iter().map(String::as_str).collect();
        prop_assert_eq!(tf.matches(&tt), oracle(&fs, &ts));
    }

    #[test]
    fn literal_filter_matches_only_itself(a in topic(), b in topic()) {
        let f = TopicFilter::new(a.join("/")).unwrap();
        prop_assert_eq!(f.matches(&Topic::new(b.join("/")).unwrap()), a == b);
    }

    #[test]
    fn covers_implies_superset(f in filter(), g in filter(), t in topic()) {
        let (f, g) = (TopicFilter::new(f.join("/")).unwrap(), TopicFilter::new(g.join("/")).unwrap());
        let tt = Topic::new(t.join("/")).unwrap();
        if f.covers(&g) && g.matches(&tt) {
            prop_assert!(f.matches(&tt));
        }
    }
}

#[test]
fn malformed_names_are_rejected() {
    for bad in ["", "a//b", "a/#/b", "a/b+", "/a", "a/"] {
        assert!(TopicFilter::new(bad).is_err(), "{bad:?}");
    }
    for bad in ["", "a/+", "a/#", "a//b"] {
        assert!(Topic::new(bad).is_err(), "{bad:?}");
    }
}
