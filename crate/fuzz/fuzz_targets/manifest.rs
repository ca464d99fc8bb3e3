#![no_main]

use libfuzzer_sys::fuzz_target;
use portrait_forge_core::datasetkit::{validate_mix, DatasetManifest, MixPolicy};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = DatasetManifest::from_json(text) {
            // anything accepted must survive a save/load cycle
            let again = DatasetManifest::from_json(&m.to_json()).expect("re-parse");
            assert_eq!(again, m);
            let _ = validate_mix(&m, &MixPolicy::default());
        }
    }
});
