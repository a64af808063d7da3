#![no_main]

use canvasrnn::checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = checkpoint::decode_raw(data);
    if let Ok(model) = checkpoint::decode(data) {
        let bytes = checkpoint::encode(&model);
        let back = checkpoint::decode(&bytes).unwrap();
        assert_eq!(checkpoint::encode(&back), bytes);
    }
});
