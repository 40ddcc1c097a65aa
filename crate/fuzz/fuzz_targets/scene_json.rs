#![no_main]

use libfuzzer_sys::fuzz_target;
use viewfuse::scene::Scene;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(scene) = Scene::from_json(s) {
            let again = Scene::from_json(&scene.to_json().unwrap()).unwrap();
            assert_eq!(again, scene);
        }
    }
});
