#![no_main]
use libfuzzer_sys::fuzz_target;
use spotscape::data::io::read_coords_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = read_coords_csv(data, "fuzz") {
        assert_eq!(m.cols(), 2);
    }
});
