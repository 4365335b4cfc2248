#![no_main]

use libfuzzer_sys::fuzz_target;

use bevcomm::Codebook;

fuzz_target!(|data: &[u8]| {
    if let Ok(cb) = Codebook::from_bytes(data) {
        assert_eq!(cb.to_bytes(), data);
    }
});
