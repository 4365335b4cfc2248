#![no_main]

use libfuzzer_sys::fuzz_target;

// Anything unpack accepts must re-pack to the same bytes.
fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = bevcomm::wire::unpack(data) {
        assert_eq!(msg.to_bytes(), data);
        assert_eq!(msg.byte_len(), data.len());
    }
});
