//! Wide-CSV ingestion: one row per formulation, one column per ingredient.

use std::path::Path;

use indexmap::IndexMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formulation::{DatasetSchema, FilamentAspect, Formulation, Printability};
use crate::parser::normalize_text;

/// A non-fatal oddity found while loading a row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowDiagnostic {
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub formulations: Vec<Formulation>,
    pub diagnostics: Vec<RowDiagnostic>,
}

pub fn load_wide_csv(path: &Path, schema: &DatasetSchema) -> Result<Vec<Formulation>> {
    Ok(load_wide_csv_with_diagnostics(path, schema)?.formulations)
}

pub fn load_wide_csv_with_diagnostics(path: &Path, schema: &DatasetSchema) -> Result<LoadedDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_wide_csv(file, schema)
}

fn find_column(headers: &[String], name: &str) -> Result<usize> {
    let key = normalize_text(name);
    headers
        .iter()
        .position(|h| h.trim() == name.trim())
        .or_else(|| headers.iter().position(|h| normalize_text(h) == key))
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

/// Reads a wide CSV from any reader. Row numbers in errors are 1-based data
/// row indices (the header is row 0).
pub fn read_wide_csv<R: std::io::Read>(reader: R, schema: &DatasetSchema) -> Result<LoadedDataset> {
    schema.check()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();

    // ingredient columns in header order
    let mut ingredient_cols: Vec<(usize, String)> = Vec::new();
    for name in schema.api_columns.iter().chain(&schema.excipient_columns) {
        ingredient_cols.push((find_column(&headers, name)?, name.clone()));
    }
    ingredient_cols.sort_by_key(|(idx, _)| *idx);
    let aspect_idx = find_column(&headers, &schema.aspect_column)?;
    let print_idx = find_column(&headers, &schema.printability_column)?;
    let id_idx = match &schema.id_column {
        Some(c) => Some(find_column(&headers, c)?),
        None => None,
    };

    let mut out = LoadedDataset::default();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let cell = |idx: usize| record.get(idx).unwrap_or("");

        let mut composition = IndexMap::new();
        for (idx, name) in &ingredient_cols {
            let raw = cell(*idx).trim();
            if raw.is_empty() {
                continue;
            }
            let value: f64 = raw.parse().map_err(|_| Error::Row {
                row,
                message: format!("column '{name}': '{raw}' is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Row {
                    row,
                    message: format!("column '{name}': '{raw}' is not finite"),
                });
            }
            if value != 0.0 {
                composition.insert(name.clone(), value);
            }
        }

        let (aspect, ok) = FilamentAspect::parse_cell(cell(aspect_idx));
        if !ok {
            out.diagnostics.push(RowDiagnostic {
                row,
                message: format!("unrecognized filament aspect '{}'", cell(aspect_idx)),
            });
        }
        let (printable, ok) = Printability::parse_cell(cell(print_idx));
        if !ok {
            out.diagnostics.push(RowDiagnostic {
                row,
                message: format!("unrecognized printability '{}'", cell(print_idx)),
            });
        }
        let id = match id_idx {
            Some(idx) => cell(idx).trim().to_string(),
            None => row.to_string(),
        };
        out.formulations.push(Formulation {
            id,
            composition,
            printable,
            aspect,
        });
    }
    Ok(out)
}

/// Writes formulations back out in the schema's wide layout. The id column is
/// written only when the schema names one.
pub fn write_wide_csv<W: std::io::Write>(
    writer: W,
    formulations: &[Formulation],
    schema: &DatasetSchema,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let ingredient_cols: Vec<&String> = schema
        .api_columns
        .iter()
        .chain(&schema.excipient_columns)
        .collect();
    let mut header: Vec<&str> = Vec::new();
    if let Some(id) = &schema.id_column {
        header.push(id);
    }
    header.extend(ingredient_cols.iter().map(|s| s.as_str()));
    header.push(&schema.printability_column);
    header.push(&schema.aspect_column);
    wtr.write_record(&header)?;

    for f in formulations {
        let mut cells: Vec<String> = vec![String::new(); ingredient_cols.len()];
        for (name, value) in &f.composition {
            let key = normalize_text(name);
            let idx = ingredient_cols
                .iter()
                .position(|c| normalize_text(c) == key)
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "formulation {}: ingredient '{name}' has no column in the schema",
                        f.id
                    ))
                })?;
            cells[idx] = format!("{value}");
        }
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        if schema.id_column.is_some() {
            row.push(f.id.clone());
        }
        row.extend(cells);
        row.push(f.printable.label().to_string());
        row.push(match f.aspect {
            FilamentAspect::Unknown => String::new(),
            a => a.label().to_string(),
        });
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_wide_csv(path: &Path, formulations: &[Formulation], schema: &DatasetSchema) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_wide_csv(std::io::BufWriter::new(file), formulations, schema)
}
