#![no_main]

use libfuzzer_sys::fuzz_target;
use portrait_forge_core::faceio::protocol::Request;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        if let Ok(req) = Request::decode(line) {
            let encoded = req.encode();
            assert_eq!(Request::decode(&encoded).expect("re-decode").encode(), encoded);
        }
    }
});
