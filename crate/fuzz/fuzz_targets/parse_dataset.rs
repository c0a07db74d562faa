//! Fuzzes the dataset CSV decoder: arbitrary bytes with an arbitrary target
//! column name must either parse into a dataset or return a structured
//! error — never panic. The first input byte selects the target column so
//! the fuzzer can explore both the found and not-found paths.

#![no_main]

use libfuzzer_sys::fuzz_target;

use gnflow::Dataset;

fuzz_target!(|data: &[u8]| {
    if data.is_empty() {
        return;
    }
    let target = match data[0] % 3 {
        0 => "y",
        1 => "target",
        _ => "x0",
    };
    let _ = Dataset::from_csv_reader(&data[1..], target);
});
