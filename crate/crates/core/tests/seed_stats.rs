use proptest::prelude::*;
use rand::Rng;
use tabprobe::seed::{derive_seed, rng_from};
use tabprobe::stats::{mean_std, percent, ratio, Confusion, Prf};

#[test]
fn seeded_streams_repeat() {
    let a: Vec<u32> = rng_from(5).random_iter().take(8).collect();
    let b: Vec<u32> = rng_from(5).random_iter().take(8).collect();
    assert_eq!(a, b);
    assert_ne!(a, rng_from(6).random_iter().take(8).collect::<Vec<u32>>());
}

#[test]
fn rate_helpers() {
    assert_eq!(ratio::<f64>(1, 0), None);
    assert_eq!(percent::<f64>(1, 0), 0.0);
    assert_eq!(percent::<f64>(1, 4), 25.0);
    assert_eq!(mean_std::<f64>(&[]), (0.0, 0.0));
    assert_eq!(mean_std(&[2.0f64, 4.0]), (3.0, 1.0));
    let c = Confusion { tp: 0, fp: 0, fn_: 0 };
    assert_eq!(
        c.prf::<f64>(),
        Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0
        }
    );
    let c = Confusion { tp: 0, fp: 2, fn_: 0 };
    assert_eq!(c.prf::<f64>().precision, 0.0);
    assert_eq!(serde_json::to_value(c).unwrap()["fn"], 0);
}

proptest! {
    #[test]
    fn derived_seeds_depend_on_every_part(seed in any::<u64>(), a in "[a-z]{0,4}", b in "[a-z]{0,4}") {
        prop_assert_eq!(derive_seed(seed, &[&a, &b]), derive_seed(seed, &[&a, &b]));
        prop_assert_ne!(derive_seed(seed, &[&a, &b]), derive_seed(seed.wrapping_add(1), &[&a, &b]));
        if !b.is_empty() {
            let joined = format!("{a}{b}");
            prop_assert_ne!(derive_seed(seed, &[&a, &b]), derive_seed(seed, &[&joined, ""]));
        }
    }

    #[test]
    fn f1_is_the_harmonic_mean(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
        let prf = Confusion { tp, fp, fn_ }.prf::<f64>();
        prop_assert!((0.0..=1.0).contains(&prf.f1));
        if prf.precision + prf.recall > 0.0 {
            let h = 2.0 * prf.precision * prf.recall / (prf.precision + prf.recall);
            prop_assert!((prf.f1 - h).abs() < 1e-12);
        }
        prop_assert!(prf.f1 <= prf.precision.max(prf.recall) + 1e-12);
    }
}
