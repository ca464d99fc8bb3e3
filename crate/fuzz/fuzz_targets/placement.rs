#![no_main]

use libfuzzer_sys::fuzz_target;
use portrait_forge::session::PlacementTransform;
use portrait_forge_core::faceio::StubBackend;
use portrait_forge_core::genflow::{render_keypoints, KeypointImageSpec};
use portrait_forge_core::Point;

fuzz_target!(|data: &[u8]| {
    let Ok(t) = serde_json::from_slice::<PlacementTransform>(data) else { return };
    let face = StubBackend::face_for(128, 128);
    let a = t.affine(Point::new(64.0, 64.0));
    let lm = face.landmarks.map(|p| a.apply(p));
    // whatever the transform, drawing must fail cleanly or succeed
    let _ = render_keypoints(&lm, &KeypointImageSpec::new(64, 64));
});
