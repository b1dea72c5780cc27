//! Problem files: matrices as JSON arrays of rows or headerless CSV, vectors
//! as JSON arrays (or `{"weights": [...]}`) or a single CSV row or column.

use std::path::Path;

use measure_mirror::{DiscreteMeasure, Matrix};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{}: {msg}", path.display()))
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| bad(path, e))?;
            rec.iter().map(|field| field.parse::<f64>().map_err(|e| bad(path, format!("{field:?}: {e}")))).collect()
        })
        .collect()
}

pub fn read_matrix(path: &Path) -> Result<Matrix, Failure> {
    let rows: Vec<Vec<f64>> = if is_csv(path) {
        read_csv_rows(path)?
    } else {
        serde_json::from_str(&read_text(path)?).map_err(|e| bad(path, e))?
    };
    Matrix::from_rows(rows).map_err(|e| bad(path, e))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum VectorFile {
    Plain(Vec<f64>),
    Wrapped { weights: Vec<f64> },
}

pub fn read_weights(path: &Path) -> Result<Vec<f64>, Failure> {
    if is_csv(path) {
        let rows = read_csv_rows(path)?;
        return match rows.as_slice() {
            [row] => Ok(row.clone()),
            _ if rows.iter().all(|r| r.len() == 1) => Ok(rows.into_iter().map(|r| r[0]).collect()),
            _ => Err(bad(path, "expected a single row or a single column")),
        };
    }
    match serde_json::from_str(&read_text(path)?).map_err(|e| bad(path, e))? {
        VectorFile::Plain(w) | VectorFile::Wrapped { weights: w } => Ok(w),
    }
}

pub fn read_measure(path: &Path) -> Result<DiscreteMeasure, Failure> {
    DiscreteMeasure::new(read_weights(path)?).map_err(|e| bad(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| bad(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::io(path, e))
}
