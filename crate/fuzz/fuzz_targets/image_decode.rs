#![no_main]

use libfuzzer_sys::fuzz_target;
use portrait_forge_core::composite::Mask;
use portrait_forge_core::faceio::protocol::decode_png_b64;
use portrait_forge_core::ImageBuffer;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = ImageBuffer::decode(data) {
        assert_eq!(img.data().len(), img.width() as usize * img.height() as usize * 3);
    }
    let _ = Mask::decode(data);
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = decode_png_b64(text);
    }
});
