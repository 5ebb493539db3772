//! Bulk-load readers. CSV headers name columns; empty cells are null.

use std::io::{BufRead, Read};

use serde_json::Value as Json;

use super::Record;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub fn read_csv(reader: impl Read) -> Result<Vec<Record>, LoadError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(
            headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| {
                    let v = if v.is_empty() { Json::Null } else { Json::from(v) };
                    (h.to_string(), v)
                })
                .collect(),
        );
    }
    Ok(out)
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<Record>, LoadError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| LoadError::Json { line: n + 1, message };
        match serde_json::from_str::<Json>(&line).map_err(|e| err(e.to_string()))? {
            Json::Object(map) => out.push(map),
            other => return Err(err(format!("expected an object, got {other}"))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_cells_become_strings_or_null() {
        let rows = read_csv("Title,Year\nKidney atlas,2020\nBlank,\n".as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0]["Year"], Json::from("2020"));
        assert_eq!(rows[1]["Year"], Json::Null);
    }

    #[test]
    fn jsonl_rejects_non_objects() {
        assert_eq!(read_jsonl("{\"a\":1}\n\n{\"a\":2}\n".as_bytes()).unwrap().len(), 2);
        assert!(matches!(read_jsonl("[1]\n".as_bytes()), Err(LoadError::Json { line: 1, .. })));
    }
}
