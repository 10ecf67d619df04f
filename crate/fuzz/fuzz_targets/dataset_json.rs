#![no_main]

use libfuzzer_sys::fuzz_target;
use seqrec::Dataset;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(ds) = Dataset::from_json(text) else { return };
    let again = Dataset::from_json(&ds.to_json().expect("serialises")).expect("reparses");
    assert_eq!(again, ds);
});
