#![no_main]

use libfuzzer_sys::fuzz_target;

use bevcomm::io::{format_dataset, parse_dataset};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rows) = parse_dataset(text) {
        assert_eq!(parse_dataset(&format_dataset(&rows)).unwrap(), rows);
    }
});
