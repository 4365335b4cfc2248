#![no_main]

use libfuzzer_sys::fuzz_target;

use bevcomm::sim::ScenarioDoc;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(doc) = ScenarioDoc::from_toml(text) else {
        return;
    };
    // keep accepted scenes small enough to render
    if let ScenarioDoc::Fixed(s) = &doc {
        if s.height * s.width * s.channels <= 1 << 16 && s.objects.len() <= 256 {
            let table = s.embedding_table();
            let _ = s.render_agent_view(&table, bevcomm::AgentId(0), 0);
        }
    }
});
