#![no_main]

use canvasrnn::data::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(m) = Manifest::from_json_str(text) {
        assert_eq!(Manifest::from_json_str(&m.to_json()).unwrap(), m);
    }
});
