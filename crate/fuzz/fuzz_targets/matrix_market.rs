#![no_main]
use libfuzzer_sys::fuzz_target;
use spotscape::data::io::read_matrix_market;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = read_matrix_market(data, "fuzz") {
        assert_eq!(m.len(), m.rows() * m.cols());
    }
});
