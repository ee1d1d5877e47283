//! Reading and atomically writing the tool's on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use weight_surgery::formats::{self, MATRIX_MAGIC};
use weight_surgery::{linalg, EmbeddingSet, Matrix, SingularSpectrum, WeightMatrix};

use crate::{CliError, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_owned(), source }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Writes to a temporary sibling and renames it over `path`, so readers see
/// either the old file or the complete new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io { path: path.to_owned(), source: e.error })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.to_owned(), source })
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    formats::decode_matrix(&read_bytes(path)?).map_err(|source| CliError::Format { path: path.to_owned(), source })
}

pub fn read_weights(path: &Path) -> Result<WeightMatrix> {
    Ok(WeightMatrix::new(read_matrix(path)?)?)
}

pub fn write_weights(path: &Path, w: &WeightMatrix) -> Result<()> {
    write_atomic(path, &formats::encode_matrix(w.matrix()))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    formats::decode_embeddings(&read_bytes(path)?).map_err(|source| CliError::Format { path: path.to_owned(), source })
}

/// A reference spectrum is either a WSM1 matrix (its singular values are
/// used), a JSON array of singular values, or a JSON object with a
/// `spectrum` array such as the output of `detect`. JSON values may come in
/// any order.
pub fn read_reference(path: &Path) -> Result<SingularSpectrum> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(MATRIX_MAGIC) {
        let m = formats::decode_matrix(&bytes).map_err(|source| CliError::Format { path: path.to_owned(), source })?;
        return Ok(linalg::svd(&m).spectrum);
    }
    let json_err = |source| CliError::Json { path: path.to_owned(), source };
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(json_err)?;
    let values = match value {
        serde_json::Value::Object(mut map) if map.contains_key("spectrum") => map.remove("spectrum").expect("checked"),
        other => other,
    };
    let mut values: Vec<f64> = serde_json::from_value(values).map_err(json_err)?;
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(SingularSpectrum::new(values)?)
}

/// Parses a headerless numeric CSV, one matrix row per line. Blank lines are
/// skipped; every row must have the same number of fields.
pub fn matrix_from_csv(path: &Path, text: &str) -> Result<Matrix> {
    let csv_err = |line: usize, message: String| CliError::Csv { path: path.to_owned(), line, message };
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let start = data.len();
        for field in line.split(',') {
            let x: f64 = field.trim().parse().map_err(|_| csv_err(i + 1, format!("`{}` is not a number", field.trim())))?;
            if !x.is_finite() {
                return Err(csv_err(i + 1, format!("non-finite value `{}`", field.trim())));
            }
            data.push(x);
        }
        let n = data.len() - start;
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => return Err(csv_err(i + 1, format!("expected {c} fields, found {n}"))),
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| csv_err(0, "no rows".into()))?;
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

/// Shortest round-trip decimal form, so CSV -> WSM1 -> CSV is lossless.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(r, c)]);
        }
        out.push('\n');
    }
    out
}
