use edgeswarm::metrics::{nearest_rank, summarize, MetricsError};
use proptest::prelude::*;

proptest! {
    #[test]
    fn order_statistics_are_ordered(v in proptest::collection::vec(0u64..10_000_000, 1..400)) {
        let s = summarize(&v).unwrap();
        prop_assert_eq!(s.n, v.len());
        prop_assert!(s.min_us <= s.median_us);
        prop_assert!(s.median_us <= s.p95_us && s.p95_us <= s.p99_us && s.p99_us <= s.max_us);
        prop_assert!(s.min_us as f64 <= s.mean_us && s.mean_us <= s.max_us as f64);
        prop_assert!(s.stddev_us >= 0.0);
        for p in [s.median_us, s.p95_us, s.p99_us] {
            prop_assert!(v.contains(&p));
        }
    }

    #[test]
    fn permutation_invariant(mut v in proptest::collection::vec(any::<u32>(), 1..100), seed in any::<u64>()) {
        let a = summarize(&v.iter().map(|&x| x as u64).collect::<Vec<_>>()).unwrap();
        let k = (seed as usize) % v.len();
        v.rotate_left(k);
        v.reverse();
        let b = summarize(&v.iter().map(|&x| x as u64).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn constant_samples_have_no_spread(x in any::<u32>(), n in 1usize..200) {
        let s = summarize(&vec![x as u64; n]).unwrap();
        prop_assert_eq!(s.stddev_us, 0.0);
        prop_assert_eq!(s.mean_us, x as f64);
        prop_assert_eq!(s.p99_us, x as u64);
    }

    #[test]
    fn shift_moves_location_not_spread(v in proptest::collection::vec(0u64..1_000_000, 1..100), d in 0u64..1_000_000) {
        let a = summarize(&v).unwrap();
        let b = summarize(&v.iter().map(|x| x + d).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(b.median_us, a.median_us + d);
        prop_assert_eq!(b.p99_us, a.p99_us + d);
        prop_assert!((b.stddev_us - a.stddev_us).abs() < 1e-6 * (1.0 + a.stddev_us));
    }
}

#[test]
fn empty_is_an_error() {
    assert!(matches!(summarize(&[]), Err(MetricsError::Empty)));
}

#[test]
fn nearest_rank_hand_cases() {
    let hundred: Vec<u64> = (1..=100).collect();
    assert_eq!(nearest_rank(&hundred, 95), 95);
    assert_eq!(nearest_rank(&hundred, 99), 99);
    assert_eq!(nearest_rank(&[3, 7], 50), 3);
    assert_eq!(nearest_rank(&[3, 7], 51), 7);
    assert_eq!(nearest_rank(&[5], 1), 5);
}
