//! Line-delimited JSON files: instruction corpora and prediction records.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One generated prediction next to its input and reference response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub input: String,
    pub reference: String,
    pub prediction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const PREDICTION_KEYS: [&str; 3] = ["input", "reference", "prediction"];

pub fn write_records<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_records_to(&mut w, records).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_records_to<W: Write, T: Serialize>(w: &mut W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<jsonl writer>", e))?;
    }
    Ok(())
}

pub fn read_records<T: DeserializeOwned>(path: &Path, required: &[&str]) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records_from(std::io::BufReader::new(file), required).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses one object per line. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_records_from<R: BufRead, T: DeserializeOwned>(
    reader: R,
    required: &[&str],
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<jsonl reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Line {
            line: line_no,
            message: format!("malformed JSON: {e}"),
        })?;
        let Some(obj) = value.as_object() else {
            return Err(Error::Line {
                line: line_no,
                message: "expected a JSON object".into(),
            });
        };
        for key in required {
            if !obj.contains_key(*key) {
                return Err(Error::MissingKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
        }
        let rec = serde_json::from_value(value).map_err(|e| Error::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_records(path, &PREDICTION_KEYS)
}

pub fn write_predictions(records: &[PredictionRecord], path: &Path) -> Result<()> {
    write_records(records, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_record_error_field_is_optional() {
        let r = PredictionRecord {
            input: "Paracetamol: 5 w/w%".into(),
            reference: "ref".into(),
            prediction: "glycerin: 25 w/w%".into(),
            error: None,
        };
        let line = serde_json::to_string(&r).unwrap();
        assert!(!line.contains("error"));
        let back: Vec<PredictionRecord> =
            read_records_from(line.as_bytes(), &PREDICTION_KEYS).unwrap();
        assert_eq!(back, [r]);
    }

    #[test]
    fn non_object_line() {
        let err = read_records_from::<_, PredictionRecord>("[1,2]\n".as_bytes(), &PREDICTION_KEYS)
            .unwrap_err();
        assert!(matches!(err, Error::Line { line: 1, .. }));
    }

    #[test]
    fn wrong_type_is_a_line_error() {
        let text = "{\"input\":\"a\",\"reference\":3,\"prediction\":\"b\"}";
        let err = read_records_from::<_, PredictionRecord>(text.as_bytes(), &PREDICTION_KEYS)
            .unwrap_err();
        assert!(matches!(err, Error::Line { line: 1, .. }));
    }
}
