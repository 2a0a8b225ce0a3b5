use plugtrace::fixture::planted_countries;
use plugtrace::ingest::augment::sample_params;
use plugtrace::ingest::{augment_encoded, doubling_plan, AugmentationSpec};
use plugtrace::KnowledgeBase;

#[test]
fn encoded_output_is_stable() {
    let corpus = planted_countries(&KnowledgeBase::bundled_v1(), 4);
    let spec = AugmentationSpec { seed: 42, ..AugmentationSpec::default() };
    for img in corpus.image_refs() {
        let a = augment_encoded(&img, &spec, 0).unwrap();
        let b = augment_encoded(&img, &spec, 0).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.2, b.2);
    }
}

#[test]
fn thousand_draws_stay_in_range() {
    let spec = AugmentationSpec { seed: 7, ..AugmentationSpec::default() };
    let draws: Vec<_> = (0..1000).map(|i| sample_params(&spec, &format!("img{i}"), 0)).collect();
    assert!(draws.iter().all(|p| p.within(&spec)));
    let gray = draws.iter().filter(|p| p.grayscale).count() as f64 / 1000.0;
    assert!((0.12..=0.18).contains(&gray), "grayscale rate {gray}");
}

#[test]
fn doubling_1629() {
    let ids: Vec<String> = (0..1629).map(|i| format!("x{i:04}")).collect();
    let plan = doubling_plan(&ids);
    assert_eq!(plan.len(), 3258);
    assert_eq!(plan.iter().filter(|p| p.augmented.is_none()).count(), 1629);
}
