#![no_main]

use libfuzzer_sys::fuzz_target;
use viewfuse::config::Config;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = Config::from_json(s) {
            // Accepted configs must yield usable camera intrinsics.
            assert!(cfg.camera.intrinsics().is_ok());
        }
    }
});
