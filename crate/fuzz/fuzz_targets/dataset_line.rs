#![no_main]

use libfuzzer_sys::fuzz_target;
use viewfuse::config::Config;
use viewfuse::pipeline::Sample;
use viewfuse::viewspace::enumerate_candidates;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    let cfg = Config::default();
    let intr = cfg.camera.intrinsics().unwrap();
    let n = enumerate_candidates(&cfg.view_space).len();
    if let Ok(sample) = Sample::from_json_line(line, &intr, n) {
        let again = Sample::from_json_line(&sample.to_json_line().unwrap(), &intr, n).unwrap();
        assert_eq!(again, sample);
    }
});
