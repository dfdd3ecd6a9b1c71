mod support;

use dfl_core::eval::{compute_eer, compute_min_dcf, DcfParams};
use proptest::prelude::*;
use support::metric_oracle::{brute_eer, brute_min_dcf, random_set, set};

#[test]
fn eer_and_min_dcf_match_exhaustive_thresholds() {
    let p = DcfParams::default();
    for seed in 0..100 {
        let (s, l) = random_set(seed);
        let ss = set(&s, &l);
        let (eer, dcf) = (compute_eer(&ss).unwrap(), compute_min_dcf(&ss, p).unwrap());
        assert!((eer - brute_eer(&s, &l)).abs() < 1e-9, "seed {seed}: {eer} vs {}", brute_eer(&s, &l));
        assert!((dcf - brute_min_dcf(&s, &l, p)).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn known_small_cases() {
    // One target below three nontargets.
    let s = set(&[0.9, 0.8, 0.7, 0.3, 0.6, 0.5, 0.4, 0.2], &[true, true, true, true, false, false, false, false]);
    assert!((compute_eer(&s).unwrap() - 25.0).abs() < 1e-12);
    let perfect = set(&[2.0, 1.0], &[true, false]);
    assert_eq!(compute_eer(&perfect).unwrap(), 0.0);
    let inverted = set(&[1.0, 2.0], &[true, false]);
    assert_eq!(compute_eer(&inverted).unwrap(), 100.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn invariant_under_monotone_transforms(seed in 0u64..10_000, which in 0usize..3) {
        let (s, l) = random_set(seed);
        let f = |x: f64| match which {
            0 => 3.0 * x - 2.0,
            1 => x.exp(),
            _ => x * x * x + x,
        };
        let t: Vec<f64> = s.iter().map(|&x| f(x)).collect();
        let p = DcfParams::default();
        let (a, b) = (set(&s, &l), set(&t, &l));
        prop_assert!((compute_eer(&a).unwrap() - compute_eer(&b).unwrap()).abs() < 1e-9);
        prop_assert!((compute_min_dcf(&a, p).unwrap() - compute_min_dcf(&b, p).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn eer_lies_between_zero_and_hundred(seed in 0u64..10_000) {
        let (s, l) = random_set(seed);
        let e = compute_eer(&set(&s, &l)).unwrap();
        prop_assert!((0.0..=100.0).contains(&e));
        let d = compute_min_dcf(&set(&s, &l), DcfParams::default()).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
    }
}
