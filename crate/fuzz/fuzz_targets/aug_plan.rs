#![no_main]

use libfuzzer_sys::fuzz_target;
use portrait_forge_core::datasetkit::AugPlan;

fuzz_target!(|data: &[u8]| {
    if let Ok(plan) = serde_json::from_slice::<AugPlan>(data) {
        let _ = plan.validate();
    }
});
