//! On-disk slice layout and the CSV / MatrixMarket codecs behind it.
//!
//! A slice directory holds `expression.csv` (header = gene names, one row per
//! spot) or `expression.mtx` + `genes.txt`, `coords.csv` (header `x,y`) and an
//! optional `labels.csv` (header `label`).

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::Slice;
use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

pub const EXPRESSION_CSV: &str = "expression.csv";
pub const EXPRESSION_MTX: &str = "expression.mtx";
pub const GENES_TXT: &str = "genes.txt";
pub const COORDS_CSV: &str = "coords.csv";
pub const LABELS_CSV: &str = "labels.csv";

/// Largest dense matrix a MatrixMarket header may request.
pub const MAX_DENSE_ENTRIES: usize = 1 << 27;

/// Formats a real with 9 significant digits, using the shortest text that
/// parses back to the rounded value.
pub fn format_real(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    format!("{rounded}")
}

fn csv_error(source: &str, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line() as usize);
    Error::ingestion(source, line, err.to_string())
}

fn parse_real(field: &str, source: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::ingestion(source, Some(line), format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::ingestion(source, Some(line), format!("non-finite value {field:?}")));
    }
    Ok(v)
}

/// Reads a headed CSV of reals. Returns the header and an `n x header.len()` matrix.
pub fn read_numeric_csv<R: Read>(reader: R, source: &str) -> Result<(Vec<String>, DenseMatrix)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(source, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::ingestion(source, Some(1), "missing header"));
    }
    let cols = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(source, e))?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        for field in record.iter() {
            values.push(parse_real(field, source, line)?);
        }
        rows += 1;
    }
    Ok((header, DenseMatrix::new(rows, cols, values)?))
}

/// Expression CSV: gene names in the header, counts below.
pub fn read_expression_csv<R: Read>(reader: R, source: &str) -> Result<(Vec<String>, DenseMatrix)> {
    let (genes, m) = read_numeric_csv(reader, source)?;
    check_gene_names(&genes, source)?;
    check_nonnegative(&m, source, 2)?;
    Ok((genes, m))
}

fn check_nonnegative(m: &DenseMatrix, source: &str, first_line: usize) -> Result<()> {
    for (r, row) in m.iter_rows().enumerate() {
        if let Some(c) = row.iter().position(|&v| v < 0.0) {
            return Err(Error::ingestion(
                source,
                Some(first_line + r),
                format!("negative count {} in column {}", row[c], c + 1),
            ));
        }
    }
    Ok(())
}

fn check_gene_names(genes: &[String], source: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for g in genes {
        if g.is_empty() {
            return Err(Error::ingestion(source, None, "empty gene name"));
        }
        if !seen.insert(g.as_str()) {
            return Err(Error::ingestion(source, None, format!("duplicate gene name {g:?}")));
        }
    }
    Ok(())
}

/// Coordinates CSV with header exactly `x,y`.
pub fn read_coords_csv<R: Read>(reader: R, source: &str) -> Result<DenseMatrix> {
    let (header, m) = read_numeric_csv(reader, source)?;
    if header != ["x", "y"] {
        return Err(Error::ingestion(
            source,
            Some(1),
            format!("expected header x,y, found {}", header.join(",")),
        ));
    }
    Ok(m)
}

/// Single-column CSV with the given header name; values kept as strings.
pub fn read_string_column<R: Read>(reader: R, source: &str, column: &str) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    if header.len() != 1 || header.get(0).map(str::trim) != Some(column) {
        return Err(Error::ingestion(
            source,
            Some(1),
            format!("expected header {column:?}"),
        ));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(source, e))?;
        out.push(record.get(0).unwrap_or_default().trim().to_string());
    }
    Ok(out)
}

pub fn read_labels_csv<R: Read>(reader: R, source: &str) -> Result<Vec<String>> {
    read_string_column(reader, source, "label")
}

/// One gene name per line; blank trailing lines are ignored.
pub fn read_gene_list<R: BufRead>(reader: R, source: &str) -> Result<Vec<String>> {
    let mut genes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::ingestion(source, Some(i + 1), e.to_string()))?;
        let name = line.trim();
        if !name.is_empty() {
            genes.push(name.to_string());
        }
    }
    check_gene_names(&genes, source)?;
    Ok(genes)
}

/// MatrixMarket `coordinate real|integer general`, densified.
pub fn read_matrix_market<R: BufRead>(reader: R, source: &str) -> Result<DenseMatrix> {
    let mut lines = reader.lines().enumerate();
    let (_, banner) = lines
        .next()
        .ok_or_else(|| Error::ingestion(source, Some(1), "empty file"))?;
    let banner = banner.map_err(|e| Error::ingestion(source, Some(1), e.to_string()))?;
    let tokens: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    let ok = tokens.len() == 5
        && tokens[0] == "%%matrixmarket"
        && tokens[1] == "matrix"
        && tokens[2] == "coordinate"
        && (tokens[3] == "real" || tokens[3] == "integer")
        && tokens[4] == "general";
    if !ok {
        return Err(Error::ingestion(
            source,
            Some(1),
            "expected '%%MatrixMarket matrix coordinate real general'",
        ));
    }

    let mut size: Option<(usize, usize, usize)> = None;
    let mut matrix = DenseMatrix::zeros(0, 0);
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::ingestion(source, Some(lineno), e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match size {
            None => {
                if fields.len() != 3 {
                    return Err(Error::ingestion(source, Some(lineno), "expected 'rows cols nnz'"));
                }
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::ingestion(source, Some(lineno), format!("bad size field {s:?}")))
                };
                let (r, c, nnz) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
                let entries = r.checked_mul(c).filter(|&e| e <= MAX_DENSE_ENTRIES).ok_or_else(|| {
                    Error::ingestion(source, Some(lineno), format!("matrix {r} x {c} is too large"))
                })?;
                if nnz > entries {
                    return Err(Error::ingestion(
                        source,
                        Some(lineno),
                        format!("{nnz} entries exceed {r} x {c}"),
                    ));
                }
                matrix = DenseMatrix::zeros(r, c);
                size = Some((r, c, nnz));
            }
            Some((r, c, nnz)) => {
                if fields.len() != 3 {
                    return Err(Error::ingestion(source, Some(lineno), "expected 'row col value'"));
                }
                let idx = |s: &str, bound: usize| {
                    s.parse::<usize>()
                        .ok()
                        .filter(|&v| v >= 1 && v <= bound)
                        .ok_or_else(|| {
                            Error::ingestion(source, Some(lineno), format!("index {s:?} outside 1..={bound}"))
                        })
                };
                let (ri, ci) = (idx(fields[0], r)? - 1, idx(fields[1], c)? - 1);
                let v = parse_real(fields[2], source, lineno)?;
                if seen.len() == nnz {
                    return Err(Error::ingestion(source, Some(lineno), format!("more than {nnz} entries")));
                }
                if !seen.insert((ri, ci)) {
                    return Err(Error::ingestion(
                        source,
                        Some(lineno),
                        format!("duplicate entry ({}, {})", ri + 1, ci + 1),
                    ));
                }
                matrix.set(ri, ci, v);
            }
        }
    }
    match size {
        None => Err(Error::ingestion(source, None, "missing size line")),
        Some((_, _, nnz)) if seen.len() != nnz => Err(Error::ingestion(
            source,
            None,
            format!("expected {nnz} entries, found {}", seen.len()),
        )),
        Some(_) => Ok(matrix),
    }
}

/// Serializes a headed numeric CSV with 9 significant digits.
pub fn numeric_csv_bytes(header: &[String], m: &DenseMatrix) -> Result<Vec<u8>> {
    if header.len() != m.cols() {
        return Err(Error::Shape {
            op: "numeric_csv_bytes",
            left: m.shape(),
            right: (1, header.len()),
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Io(e.into()))?;
    for row in m.iter_rows() {
        w.write_record(row.iter().map(|&v| format_real(v)))
            .map_err(|e| Error::Io(e.into()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn string_column_bytes(column: &str, values: &[String]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([column]).map_err(|e| Error::Io(e.into()))?;
    for v in values {
        w.write_record([v]).map_err(|e| Error::Io(e.into()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn matrix_market_bytes(m: &DenseMatrix) -> Vec<u8> {
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let nnz = m.as_slice().iter().filter(|&&v| v != 0.0).count();
    out.push_str(&format!("{} {} {}\n", m.rows(), m.cols(), nnz));
    for (r, row) in m.iter_rows().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                out.push_str(&format!("{} {} {}\n", r + 1, c + 1, format_real(v)));
            }
        }
    }
    out.into_bytes()
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::ingestion(&path.display().to_string(), None, e.to_string()))
}

/// Loads one slice directory.
pub fn load_slice(dir: &Path) -> Result<Slice> {
    let name = |f: &str| dir.join(f).display().to_string();
    let csv_path = dir.join(EXPRESSION_CSV);
    let mtx_path = dir.join(EXPRESSION_MTX);
    let (genes, expression) = if csv_path.exists() {
        read_expression_csv(open(&csv_path)?, &name(EXPRESSION_CSV))?
    } else if mtx_path.exists() {
        let m = read_matrix_market(open(&mtx_path)?, &name(EXPRESSION_MTX))?;
        check_nonnegative(&m, &name(EXPRESSION_MTX), 1)
            .map_err(|_| Error::ingestion(&name(EXPRESSION_MTX), None, "negative count"))?;
        let genes = read_gene_list(open(&dir.join(GENES_TXT))?, &name(GENES_TXT))?;
        if genes.len() != m.cols() {
            return Err(Error::ingestion(
                &name(GENES_TXT),
                None,
                format!("{} gene names for {} matrix columns", genes.len(), m.cols()),
            ));
        }
        (genes, m)
    } else {
        return Err(Error::ingestion(
            &dir.display().to_string(),
            None,
            format!("missing {EXPRESSION_CSV} or {EXPRESSION_MTX}"),
        ));
    };
    let coords = read_coords_csv(open(&dir.join(COORDS_CSV))?, &name(COORDS_CSV))?;
    if coords.rows() != expression.rows() {
        return Err(Error::ingestion(
            &name(COORDS_CSV),
            None,
            format!("{} coordinate rows for {} spots", coords.rows(), expression.rows()),
        ));
    }
    let labels_path = dir.join(LABELS_CSV);
    let labels = if labels_path.exists() {
        let labels = read_labels_csv(open(&labels_path)?, &name(LABELS_CSV))?;
        if labels.len() != expression.rows() {
            return Err(Error::ingestion(
                &name(LABELS_CSV),
                None,
                format!("{} labels for {} spots", labels.len(), expression.rows()),
            ));
        }
        Some(labels)
    } else {
        None
    };
    let slice_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Slice::new(slice_id, expression, coords, genes, labels)
}

/// File names and contents of a slice in the CSV layout.
pub fn slice_file_bytes(slice: &Slice) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut files = vec![
        (EXPRESSION_CSV, numeric_csv_bytes(&slice.gene_names, &slice.expression)?),
        (
            COORDS_CSV,
            numeric_csv_bytes(&["x".to_string(), "y".to_string()], &slice.coords)?,
        ),
    ];
    if let Some(labels) = &slice.labels {
        files.push((LABELS_CSV, string_column_bytes("label", labels)?));
    }
    Ok(files)
}

/// Writes a slice in the CSV layout.
pub fn write_slice(dir: &Path, slice: &Slice) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for (name, bytes) in slice_file_bytes(slice)? {
        let path = dir.join(name);
        atomic_write(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
