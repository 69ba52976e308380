#![no_main]
use libfuzzer_sys::fuzz_target;
use spotscape::data::io::read_gene_list;

fuzz_target!(|data: &[u8]| {
    if let Ok(genes) = read_gene_list(data, "fuzz") {
        assert!(genes.iter().all(|g| !g.is_empty()));
    }
});
