#![no_main]

use libfuzzer_sys::fuzz_target;
use portrait_forge_core::faceio::protocol::Response;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        if let Ok(resp) = Response::decode(line) {
            let encoded = resp.encode();
            assert_eq!(Response::decode(&encoded).expect("re-decode").encode(), encoded);
        }
    }
});
