#![no_main]

use libfuzzer_sys::fuzz_target;
use seqrec::ingest::{derive_stats, parse_pois, IngestConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(pois) = parse_pois(data) else { return };
    if pois.len() > 64 {
        return;
    }
    if let Ok((table, _)) = derive_stats(&pois, &[], &IngestConfig::default()) {
        assert_eq!(table.len(), pois.len());
    }
});
