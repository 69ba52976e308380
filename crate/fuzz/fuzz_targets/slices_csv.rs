#![no_main]
use libfuzzer_sys::fuzz_target;
use spotscape_cli::formats::read_slices;

fuzz_target!(|data: &[u8]| {
    let _ = read_slices(data, "fuzz");
});
