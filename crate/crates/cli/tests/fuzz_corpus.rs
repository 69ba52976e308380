//! Replays the checked-in fuzz seeds through their parsers. Every seed is a
//! valid input, so each must parse.

use std::fs;
use std::io::BufReader;
use std::path::PathBuf;

use spotscape::data::io::{read_coords_csv, read_expression_csv, read_gene_list, read_labels_csv, read_matrix_market};
use spotscape::pipeline::Checkpoint;
use spotscape_cli::config::RunConfig;
use spotscape_cli::formats::{read_embeddings, read_slices};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.display().to_string(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn each(target: &str, check: impl Fn(&[u8]) -> Result<(), String>) {
    for (name, bytes) in seeds(target) {
        check(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn table_seeds_parse() {
    each("expression_csv", |b| read_expression_csv(b, "seed").map(drop).map_err(|e| e.to_string()));
    each("coords_csv", |b| read_coords_csv(b, "seed").map(drop).map_err(|e| e.to_string()));
    each("labels_csv", |b| read_labels_csv(b, "seed").map(drop).map_err(|e| e.to_string()));
    each("slices_csv", |b| read_slices(b, "seed").map(drop).map_err(|e| e.to_string()));
    each("embeddings", |b| read_embeddings(b, "seed").map(drop).map_err(|e| e.to_string()));
}

#[test]
fn text_seeds_parse() {
    each("gene_list", |b| read_gene_list(BufReader::new(b), "seed").map(drop).map_err(|e| e.to_string()));
    each("matrix_market", |b| read_matrix_market(BufReader::new(b), "seed").map(drop).map_err(|e| e.to_string()));
}

#[test]
fn config_seeds_round_trip() {
    each("run_config", |b| {
        let text = std::str::from_utf8(b).map_err(|e| e.to_string())?;
        let cfg = RunConfig::parse(text).map_err(|e| e.to_string())?;
        let again = RunConfig::parse(&cfg.to_toml()).map_err(|e| e.to_string())?;
        (again == cfg).then_some(()).ok_or_else(|| "round trip changed the config".into())
    });
}

#[test]
fn checkpoint_seeds_round_trip() {
    each("checkpoint", |b| {
        let state = Checkpoint::from_json(b).map_err(|e| e.to_string())?;
        let again = Checkpoint::from_json(&state.to_json().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        (again == state).then_some(()).ok_or_else(|| "round trip changed the checkpoint".into())
    });
}
