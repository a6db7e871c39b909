#![no_main]

use libfuzzer_sys::fuzz_target;

// Request bodies arrive from arbitrary attack clients.
fuzz_target!(|data: &[u8]| {
    let _ = inferaudit::service::wire::parse_inputs_body(data);
});
