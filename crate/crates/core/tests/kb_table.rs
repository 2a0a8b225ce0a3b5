use std::time::Instant;

use plugtrace::{CountryCode, KnowledgeBase, PlugType};

#[test]
fn cardinalities_and_inverse_index() {
    let start = Instant::now();
    let kb = KnowledgeBase::bundled_v1();
    assert_eq!(kb.cardinalities(), [46, 28, 65, 21, 24, 35, 32, 1, 11, 9, 6, 9]);
    for t in PlugType::ALL {
        for c in kb.countries_for(t) {
            assert!(kb.types_for_country(*c).contains(&t));
        }
    }
    for c in CountryCode::all() {
        for t in kb.types_for_country(c) {
            assert!(kb.countries_for(t).contains(&c));
        }
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}
