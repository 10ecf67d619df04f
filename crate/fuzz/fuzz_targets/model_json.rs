#![no_main]

use libfuzzer_sys::fuzz_target;
use seqrec::Model;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(model) = Model::from_json(text) else { return };
    assert!(model.check().is_ok());
    let again = Model::from_json(&model.to_json().expect("serialises")).expect("reparses");
    assert_eq!(again, model);
});
