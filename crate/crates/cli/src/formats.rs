//! Per-spot output tables: embeddings, cluster and slice assignments.

use std::io::Read;

use spotscape::data::io::{numeric_csv_bytes, read_numeric_csv, read_string_column, string_column_bytes};
use spotscape::numeric::DenseMatrix;
use spotscape::{Error, Result};

pub const EMBEDDINGS_CSV: &str = "embeddings.csv";
pub const CLUSTERS_CSV: &str = "clusters.csv";
pub const SLICES_CSV: &str = "slices.csv";
pub const LABELS_CSV: &str = "labels.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const REPORT_JSON: &str = "report.json";
pub const CHECKPOINT_JSON: &str = "checkpoint.json";
pub const RUN_CONFIG_TOML: &str = "run_config.toml";
pub const IMPUTED_CSV: &str = "imputed.csv";
pub const ALIGNMENT_JSON: &str = "alignment.json";
pub const TRANSFERRED_CSV: &str = "transferred_labels.csv";

pub fn embedding_header(dim: usize) -> Vec<String> {
    (0..dim).map(|d| format!("dim_{d}")).collect()
}

pub fn embeddings_bytes(z: &DenseMatrix) -> Result<Vec<u8>> {
    numeric_csv_bytes(&embedding_header(z.cols()), z)
}

/// Reads an embeddings table whose header is exactly `dim_0, dim_1, ...`.
pub fn read_embeddings<R: Read>(reader: R, source: &str) -> Result<DenseMatrix> {
    let (header, z) = read_numeric_csv(reader, source)?;
    if header != embedding_header(header.len()) {
        return Err(Error::Ingestion(spotscape::error::IngestionError {
            source: source.to_string(),
            line: Some(1),
            message: "embedding header must be dim_0, dim_1, ...".into(),
        }));
    }
    if z.rows() == 0 {
        return Err(Error::Ingestion(spotscape::error::IngestionError {
            source: source.to_string(),
            line: None,
            message: "no embedding rows".into(),
        }));
    }
    Ok(z)
}

pub fn clusters_bytes(labels: &[usize]) -> Result<Vec<u8>> {
    let values: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
    string_column_bytes("cluster", &values)
}

pub fn slices_bytes(slice_ids: &[String]) -> Result<Vec<u8>> {
    string_column_bytes("slice", slice_ids)
}

pub fn read_slices<R: Read>(reader: R, source: &str) -> Result<Vec<String>> {
    read_string_column(reader, source, "slice")
}
