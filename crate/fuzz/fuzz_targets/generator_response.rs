#![no_main]

use libfuzzer_sys::fuzz_target;
use portrait_forge_core::genflow::{decode_response, WireResponse};

fuzz_target!(|data: &[u8]| {
    let Some((&count, body)) = data.split_first() else { return };
    if let Ok(resp) = serde_json::from_slice::<WireResponse>(body) {
        if let Ok(images) = decode_response(&resp, u32::from(count % 4)) {
            assert_eq!(images.len(), usize::from(count % 4));
        }
    }
});
