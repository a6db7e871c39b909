#![no_main]

use libfuzzer_sys::fuzz_target;

// Remote planner responses come off the wire.
fuzz_target!(|data: &[u8]| {
    let _ = inferaudit::agent::parse_chat_completion(data);
});
