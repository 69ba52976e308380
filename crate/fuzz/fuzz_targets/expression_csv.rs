#![no_main]
use libfuzzer_sys::fuzz_target;
use spotscape::data::io::read_expression_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok((genes, m)) = read_expression_csv(data, "fuzz") {
        assert_eq!(genes.len(), m.cols());
        assert!(m.is_finite());
    }
});
