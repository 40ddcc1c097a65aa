#![no_main]

use libfuzzer_sys::fuzz_target;
use viewfuse::model::Model;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = Model::from_checkpoint(data) {
        assert!(model.params.all_finite());
        let bytes = model.to_checkpoint().unwrap();
        assert!(Model::from_checkpoint(&bytes).is_ok());
    }
});
