#![no_main]

use libfuzzer_sys::fuzz_target;

// The model artifact decoder takes arbitrary bytes from disk; it must
// reject anything malformed without panicking or over-allocating.
fuzz_target!(|data: &[u8]| {
    let _ = inferaudit::nn::decode_model(data);
});
