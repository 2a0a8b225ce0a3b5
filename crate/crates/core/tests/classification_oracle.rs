mod support;

use plugtrace::vision::{classification_report, confusion_matrix};
use proptest::prelude::*;
use support::{clf_ref, label_pairs};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn report_matches_arithmetic(seed in any::<u64>()) {
        let (t, p) = label_pairs(seed);
        let m = confusion_matrix(&t, &p).unwrap();
        let r = classification_report(&m).unwrap();
        let want = clf_ref(&t, &p);
        prop_assert_eq!(&m.counts, &want.counts);
        prop_assert_eq!(m.total(), want.total);
        prop_assert_eq!(r.total, want.total);
        prop_assert!((r.accuracy - m.trace() as f64 / m.total() as f64).abs() < 1e-12);
        prop_assert!((r.accuracy - want.accuracy).abs() < 1e-12);
        prop_assert!((r.macro_precision - want.macro_p).abs() < 1e-12);
        prop_assert!((r.macro_recall - want.macro_r).abs() < 1e-12);
        prop_assert!((r.macro_f1 - want.macro_f1).abs() < 1e-12);
    }
}
