#![no_main]

use libfuzzer_sys::fuzz_target;

// Planner replies are untrusted LLM output; the section parser must never
// panic on any text.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = inferaudit::agent::parse_plan(text);
    }
});
