#![no_main]

use libfuzzer_sys::fuzz_target;
use viewfuse::control::TrajectoryStep;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        let _ = TrajectoryStep::from_json_line(line);
    }
});
