#![no_main]

use libfuzzer_sys::fuzz_target;
use portrait_forge_core::cropkit::BucketSet;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(set) = BucketSet::parse(text) {
            assert!(!set.buckets().is_empty());
            let _ = set.nearest(1200, 900);
            let _ = set.nearest(1, u32::MAX);
        }
    }
});
