//! Minimal tab-separated reading shared by the dictionary, KG and map files.

use std::io::BufRead;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsvError {
    #[error("line {line}: expected at least {expected} tab-separated fields, found {found}")]
    MissingFields {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: field {field}: cannot parse {value:?}")]
    BadField {
        line: usize,
        field: usize,
        value: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Row {
    pub line: usize,
    pub fields: Vec<String>,
}

impl Row {
    pub fn parse<T: FromStr>(&self, field: usize) -> Result<T, TsvError> {
        self.fields[field]
            .trim()
            .parse()
            .map_err(|_| TsvError::BadField {
                line: self.line,
                field,
                value: self.fields[field].clone(),
            })
    }
}

/// Non-empty, non-comment (`#`) lines split on tabs, each with at least `min_fields` fields.
pub fn rows<R: BufRead>(
    input: R,
    min_fields: usize,
) -> impl Iterator<Item = Result<Row, TsvError>> {
    input.lines().enumerate().filter_map(move |(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(e.into())),
        };
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            return None;
        }
        let fields: Vec<String> = trimmed.split('\t').map(str::to_string).collect();
        if fields.len() < min_fields {
            return Some(Err(TsvError::MissingFields {
                line: i + 1,
                expected: min_fields,
                found: fields.len(),
            }));
        }
        Some(Ok(Row {
            line: i + 1,
            fields,
        }))
    })
}

/// Replaces tabs and newlines so a value fits in one TSV cell.
pub fn clean(value: &str) -> String {
    value.replace(['\t', '\n', '\r'], " ")
}
