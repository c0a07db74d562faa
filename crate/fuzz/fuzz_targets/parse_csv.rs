//! Fuzzes the trajectory-artifact decoder: arbitrary bytes must either parse
//! into time-series rows or return a structured error — never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = gnflow::harness::run::read_time_series(data);
});
