#![no_main]

use libfuzzer_sys::fuzz_target;

use bevcomm::io::parse_score_maps;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(maps) = parse_score_maps(text) {
        for m in &maps {
            assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
});
