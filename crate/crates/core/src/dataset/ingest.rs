use std::borrow::Cow;
use std::str::FromStr;

use super::{format_number, Dataset, Feature, FeatureKind, Value};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

impl Format {
    /// Guesses the format from a file name, defaulting to CSV.
    pub fn from_path(path: &str) -> Self {
        let lower = path.to_ascii_lowercase();
        if lower.ends_with(".jsonl") || lower.ends_with(".ndjson") || lower.ends_with(".json") {
            Format::Jsonl
        } else {
            Format::Csv
        }
    }
}

pub type DeclaredFeature = Feature;

enum Cell {
    Missing,
    Number(f64),
    Text(String),
}

struct RawTable {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

/// Reads a CSV or JSONL byte stream. Without a declared schema, a column is
/// numeric iff every non-missing value parses as a finite number.
pub fn ingest(source: &[u8], format: Format, declared: Option<&[DeclaredFeature]>) -> Result<Dataset> {
    let text = std::str::from_utf8(source).map_err(|e| Error::Malformed {
        row: 0,
        column: String::new(),
        message: format!("input is not valid UTF-8: {e}"),
    })?;
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let raw = match format {
        Format::Csv => read_csv(text)?,
        Format::Jsonl => read_jsonl(text)?,
    };
    if raw.rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    build(raw, declared)
}

fn read_csv(text: &str) -> Result<RawTable> {
    let header_end = text.find('\n').unwrap_or(text.len());
    let single_column = !text[..header_end].contains(',');
    // The csv reader skips blank lines; with a single column they are empty cells.
    let text: Cow<str> = if single_column {
        Cow::Owned(mark_blank_lines(text))
    } else {
        Cow::Borrowed(text)
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(e, 0))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    for (i, c) in columns.iter().enumerate() {
        if columns[..i].contains(c) {
            return Err(Error::Malformed {
                row: 0,
                column: c.clone(),
                message: "duplicate column name".into(),
            });
        }
    }

    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(e, row))?;
        rows.push(
            record
                .iter()
                .map(|cell| {
                    if cell.is_empty() {
                        Cell::Missing
                    } else {
                        Cell::Text(cell.to_string())
                    }
                })
                .collect(),
        );
    }
    Ok(RawTable { columns, rows })
}

/// Rewrites blank lines outside quoted fields as `""` so they survive as
/// one-field records. Trailing blank lines are left alone.
fn mark_blank_lines(text: &str) -> String {
    let body_end = text.trim_end_matches(['\n', '\r']).len();
    let mut out = String::with_capacity(text.len() + 16);
    let mut in_quotes = false;
    let mut at_line_start = false;
    for (i, ch) in text.char_indices() {
        if at_line_start && !in_quotes && i < body_end && (ch == '\n' || ch == '\r') {
            out.push_str("\"\"");
        }
        if ch == '"' {
            in_quotes = !in_quotes;
        }
        at_line_start = ch == '\n';
        out.push(ch);
    }
    out
}

fn csv_error(e: csv::Error, row: usize) -> Error {
    match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, pos, ..
        } => Error::Arity {
            // record 0 is the header
            row: pos.as_ref().map_or(row, |p| p.record().saturating_sub(1) as usize),
            expected: *expected_len as usize,
            found: *len as usize,
        },
        _ => Error::Malformed {
            row,
            column: String::new(),
            message: e.to_string(),
        },
    }
}

fn read_jsonl(text: &str) -> Result<RawTable> {
    let mut columns: Vec<String> = Vec::new();
    let mut objects = Vec::new();
    for (row, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let object: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(line).map_err(|e| Error::Malformed {
                row,
                column: String::new(),
                message: format!("not a JSON object: {e}"),
            })?;
        for key in object.keys() {
            if !columns.contains(key) {
                columns.push(key.clone());
            }
        }
        objects.push(object);
    }

    let mut rows = Vec::with_capacity(objects.len());
    for (row, object) in objects.into_iter().enumerate() {
        let mut cells = Vec::with_capacity(columns.len());
        for column in &columns {
            let cell = match object.get(column) {
                None | Some(serde_json::Value::Null) => Cell::Missing,
                Some(serde_json::Value::Number(n)) => Cell::Number(n.as_f64().ok_or_else(|| {
                    Error::Malformed {
                        row,
                        column: column.clone(),
                        message: "number out of range".into(),
                    }
                })?),
                Some(serde_json::Value::String(s)) => Cell::Text(s.clone()),
                Some(serde_json::Value::Bool(b)) => Cell::Text(b.to_string()),
                Some(_) => {
                    return Err(Error::Malformed {
                        row,
                        column: column.clone(),
                        message: "nested arrays and objects are not supported".into(),
                    })
                }
            };
            cells.push(cell);
        }
        rows.push(cells);
    }
    Ok(RawTable { columns, rows })
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

fn infer_kind(rows: &[Vec<Cell>], j: usize) -> FeatureKind {
    let numeric = rows.iter().all(|r| match &r[j] {
        Cell::Missing => true,
        Cell::Number(x) => x.is_finite(),
        Cell::Text(s) => parse_number(s).is_some(),
    });
    if numeric {
        FeatureKind::Numeric
    } else {
        FeatureKind::Categorical
    }
}

fn build(raw: RawTable, declared: Option<&[DeclaredFeature]>) -> Result<Dataset> {
    let RawTable { columns, rows } = raw;

    // Output column order and the source column each feature reads from.
    let (features, sources): (Vec<Feature>, Vec<usize>) = match declared {
        None => columns
            .iter()
            .enumerate()
            .map(|(j, name)| {
                (
                    Feature {
                        name: name.clone(),
                        kind: infer_kind(&rows, j),
                    },
                    j,
                )
            })
            .unzip(),
        Some(declared) => {
            if let Some(extra) = columns.iter().find(|c| !declared.iter().any(|f| &f.name == *c)) {
                return Err(Error::UnknownFeature(extra.clone()));
            }
            let mut sources = Vec::with_capacity(declared.len());
            for f in declared {
                let j = columns.iter().position(|c| c == &f.name).ok_or_else(|| Error::Malformed {
                    row: 0,
                    column: f.name.clone(),
                    message: "declared column not present in input".into(),
                })?;
                sources.push(j);
            }
            (declared.to_vec(), sources)
        }
    };

    let mut out = Vec::with_capacity(rows.len());
    for (row, cells) in rows.into_iter().enumerate() {
        let mut cells: Vec<Option<Cell>> = cells.into_iter().map(Some).collect();
        let mut values = Vec::with_capacity(features.len());
        for (feature, &j) in features.iter().zip(&sources) {
            let cell = cells[j].take().unwrap_or(Cell::Missing);
            let value = match (feature.kind, cell) {
                (_, Cell::Missing) => Value::Missing,
                (FeatureKind::Numeric, Cell::Number(x)) if x.is_finite() => Value::Number(x),
                (FeatureKind::Numeric, Cell::Text(s)) if parse_number(&s).is_some() => {
                    Value::Number(parse_number(&s).expect("checked"))
                }
                (FeatureKind::Numeric, _) => {
                    return Err(Error::Malformed {
                        row,
                        column: feature.name.clone(),
                        message: "expected a finite number".into(),
                    })
                }
                (FeatureKind::Categorical, Cell::Number(x)) => Value::Text(format_number(x)),
                (FeatureKind::Categorical, Cell::Text(s)) => Value::Text(s),
            };
            values.push(value);
        }
        out.push(values);
    }
    Dataset::from_rows(features, out)
}
