#![no_main]
use libfuzzer_sys::fuzz_target;
use spotscape_cli::formats::read_embeddings;

fuzz_target!(|data: &[u8]| {
    if let Ok(z) = read_embeddings(data, "fuzz") {
        assert!(z.rows() > 0);
    }
});
