#![no_main]

use libfuzzer_sys::fuzz_target;
use seqrec::ingest::{build_corpus, parse_visits, IngestConfig, RawPoi};

fuzz_target!(|data: &[u8]| {
    let Ok(visits) = parse_visits(data) else { return };
    let pois: Vec<RawPoi> = (0..4)
        .map(|i| RawPoi { poi_id: i, category: format!("c{}", i % 2), lon: i as f64, lat: 0.0 })
        .collect();
    if let Ok(corpus) = build_corpus(&pois, &visits, &IngestConfig::default()) {
        assert!(seqrec::domain::validate_dataset(&corpus.dataset).is_empty());
    }
});
