//! Comma-separated matrix format shared by gallery and sample-matrix files.
//!
//! The first line is a header `dim,count`. Each following line holds one
//! record of `dim` components, optionally followed by an integer label
//! column. Either every record carries a label or none does.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};

/// Rows plus optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRows {
    pub rows: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
}

pub fn write_matrix<W: Write>(
    mut out: W,
    rows: &[Vec<f64>],
    labels: Option<&[usize]>,
) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.len());
    if let Some(labels) = labels {
        if labels.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
    }
    writeln!(out, "{},{}", dim, rows.len())?;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        let mut line = row
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        if let Some(labels) = labels {
            line.push(',');
            line.push_str(&labels[i].to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(input: R) -> Result<LabeledRows> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("missing header line".into()))??;
    let mut parts = header.trim().split(',');
    let dim: usize = parse_field(parts.next(), "dim")?;
    let count: usize = parse_field(parts.next(), "count")?;
    if parts.next().is_some() {
        return Err(Error::Parse("header must be `dim,count`".into()));
    }

    let mut rows = Vec::with_capacity(count);
    let mut labels = Vec::new();
    let mut labeled: Option<bool> = None;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        let has_label = match fields.len() {
            n if n == dim => false,
            n if n == dim + 1 => true,
            n => {
                return Err(Error::Parse(format!(
                    "record {} has {n} fields, expected {dim} or {}",
                    lineno + 1,
                    dim + 1
                )))
            }
        };
        if *labeled.get_or_insert(has_label) != has_label {
            return Err(Error::Parse(format!(
                "record {} mixes labeled and unlabeled rows",
                lineno + 1
            )));
        }
        let row = fields[..dim]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("record {}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
        if has_label {
            labels.push(parse_field(Some(fields[dim]), "label")?);
        }
    }
    if rows.len() != count {
        return Err(Error::Parse(format!(
            "header declares {count} records, found {}",
            rows.len()
        )));
    }
    Ok(LabeledRows {
        rows,
        labels: labeled.unwrap_or(false).then_some(labels),
    })
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field
        .ok_or_else(|| Error::Parse(format!("missing {what}")))?
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("bad {what}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_inconsistent_records() {
        assert!(read_matrix("2,1\n1.0,2.0,3.0,4.0\n".as_bytes()).is_err());
        assert!(read_matrix("2,2\n1.0,2.0,7\n1.0,2.0\n".as_bytes()).is_err());
        assert!(read_matrix("2,3\n1.0,2.0\n".as_bytes()).is_err());
        assert!(read_matrix("".as_bytes()).is_err());
    }

    #[test]
    fn reads_labels() {
        let parsed = read_matrix("2,2\n1,2,5\n3,4,6\n".as_bytes()).unwrap();
        assert_eq!(parsed.labels, Some(vec![5, 6]));
        assert_eq!(parsed.rows[1], vec![3.0, 4.0]);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            rows in proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 3), 1..20),
            with_labels in any::<bool>(),
        ) {
            let labels: Vec<usize> = (0..rows.len()).map(|i| i * 7).collect();
            let mut buf = Vec::new();
            write_matrix(&mut buf, &rows, with_labels.then_some(labels.as_slice())).unwrap();
            let back = read_matrix(buf.as_slice()).unwrap();
            prop_assert_eq!(back.rows, rows);
            prop_assert_eq!(back.labels, with_labels.then_some(labels));
        }
    }
}
