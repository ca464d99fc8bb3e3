#![no_main]

use libfuzzer_sys::fuzz_target;
use portrait_forge_core::datasetkit::parse_prompts;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = parse_prompts(&text);
});
