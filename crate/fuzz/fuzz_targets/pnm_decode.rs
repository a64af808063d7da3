#![no_main]

use canvasrnn::data::pnm;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = pnm::decode(data) {
        let again = pnm::decode(&pnm::encode(p.width, p.height, p.channels, &p.data)).unwrap();
        assert_eq!(again.data, p.data);
    }
    let _ = pnm::decode_image(data);
    if let Ok(m) = pnm::decode_map(data) {
        assert_eq!(pnm::decode_map(&pnm::encode_map(&m)).unwrap(), m);
    }
});
