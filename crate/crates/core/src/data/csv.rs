//! Comma-separated text: the labelled-vector format `label,v1,…,vd` and a
//! generic numeric table reader for the experiment outputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, Dataset, Split};
use crate::linalg::Matrix;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses labelled vectors. An optional first line whose first field is
/// `label` is treated as a header. `C` is inferred as max label + 1.
pub fn parse_csv(text: &str) -> Result<Dataset, DataError> {
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if k == 0 && fields[0] == "label" {
            continue;
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(DataError::Ragged {
                    line: lineno,
                    expected: w,
                    found: fields.len(),
                })
            }
            _ => {}
        }
        if fields.len() < 2 {
            return Err(DataError::Ragged {
                line: lineno,
                expected: 2,
                found: fields.len(),
            });
        }
        let label: usize = fields[0].parse().map_err(|_| DataError::Parse {
            line: lineno,
            field: 1,
            text: fields[0].to_string(),
        })?;
        let values = fields[1..]
            .iter()
            .enumerate()
            .map(|(f, s)| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DataError::Parse {
                        line: lineno,
                        field: f + 2,
                        text: s.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        labels.push(label);
        columns.push(values);
    }
    if labels.is_empty() {
        return Err(DataError::Empty);
    }
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(Matrix::from_columns(&columns), labels, class_count, Split::Train)
}

pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    parse_csv(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// Writes headerless `label,v1,…,vd` rows using the shortest decimal form
/// that round-trips each value exactly.
pub fn write_csv<W: Write>(dataset: &Dataset, mut w: W) -> std::io::Result<()> {
    let x = dataset.samples();
    for (j, &label) in dataset.labels().iter().enumerate() {
        write!(w, "{label}")?;
        for i in 0..x.rows() {
            write!(w, ",{}", x[(i, j)])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut buf = Vec::new();
    write_csv(dataset, &mut buf).expect("write to Vec");
    fs::write(path, buf).map_err(io_err(path))
}

/// A numeric table with an optional header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.as_ref()?.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// Reads any comma-separated numeric file. The first line is a header if
/// any of its fields fails to parse as a number.
pub fn read_table(path: &Path) -> Result<Table, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut header = None;
    let mut rows = Vec::new();
    let mut width = None;
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if k == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            width = Some(fields.len());
            header = Some(fields.iter().map(|s| s.to_string()).collect());
            continue;
        }
        if let Some(w) = width {
            if w != fields.len() {
                return Err(DataError::Ragged {
                    line: k + 1,
                    expected: w,
                    found: fields.len(),
                });
            }
        }
        width = Some(fields.len());
        let row = fields
            .iter()
            .enumerate()
            .map(|(f, s)| {
                s.parse::<f64>().map_err(|_| DataError::Parse {
                    line: k + 1,
                    field: f + 1,
                    text: s.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Formats like C's `%.{sig}g`: `sig` significant digits, trailing zeros
/// dropped, scientific notation for very large or small magnitudes.
pub fn format_sig(x: f64, sig: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sig = sig.max(1);
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -5 || exp >= sig as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
