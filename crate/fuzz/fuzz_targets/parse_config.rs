//! Fuzzes the experiment-config decoder: arbitrary UTF-8 must either parse
//! into a validated config or return a structured error — never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = gnflow::harness::config::from_toml_str(text);
    }
});
