//! Strict CSV input with line-numbered diagnostics.

use std::path::Path;

use crate::error::{Error, Result};

/// Reads a numeric CSV whose header is exactly `required`, optionally
/// followed by all of `optional` in order. Returns the `required` columns
/// row by row.
pub fn read_columns(path: &Path, required: &[&str], optional: &[&str]) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path)?;
    read_columns_from(file, &path.display().to_string(), required, optional)
}

pub fn read_columns_from<R: std::io::Read>(
    reader: R,
    name: &str,
    required: &[&str],
    optional: &[&str],
) -> Result<Vec<Vec<f64>>> {
    let err = |line: u64, message: String| Error::Csv {
        path: name.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let full: Vec<&str> = required.iter().chain(optional).copied().collect();
    let header_ok = header
        .iter()
        .map(String::as_str)
        .eq(required.iter().copied())
        || (!optional.is_empty() && header.iter().map(String::as_str).eq(full.iter().copied()));
    if !header_ok {
        return Err(err(
            1,
            format!(
                "expected header '{}', found '{}'",
                required.join(","),
                header.join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let mut row = Vec::with_capacity(required.len());
        for (col, name) in required.iter().enumerate() {
            let field = &record[col];
            let v: f64 = field
                .parse()
                .map_err(|_| err(line, format!("column '{name}': '{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(err(line, format!("column '{name}': non-finite value")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(err(1, "no data rows".into()));
    }
    Ok(rows)
}
