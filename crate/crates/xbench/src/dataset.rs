//! Dataset ingestion and validation.
//!
//! A dataset is a panel of n DMUs, each consuming m inputs to produce s
//! outputs. All values must be strictly positive: distances downstream are
//! normalized by actual values, so zeros are rejected at ingestion rather
//! than perturbed.
//!
//! The CSV layout is fixed: first column headed `dmu`, input columns headed
//! `in:<name>`, output columns headed `out:<name>`. Column order in the file
//! fixes factor index order.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty document: missing header row")]
    MissingHeader,
    #[error("header error: {0}")]
    BadHeader(String),
    #[error("row {row} ({id:?}), column {column:?}: cannot parse {value:?} as a number")]
    NonNumeric {
        row: usize,
        id: String,
        column: String,
        value: String,
    },
    #[error("row {row} ({id:?}), column {column:?}: value {value} violates strict positivity")]
    NonPositive {
        row: usize,
        id: String,
        column: String,
        value: f64,
    },
    #[error("row {row}: duplicate DMU id {id:?}")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    FieldCount {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset must contain at least one DMU")]
    Empty,
    #[error("rescale factor {index} is {value}, must be > 0")]
    BadFactor { index: usize, value: f64 },
    #[error("expected {expected} rescale factors, got {found}")]
    FactorCount { expected: usize, found: usize },
}

/// One decision making unit: an id plus its observed inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DmuRecord {
    pub id: String,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
}

/// The validated panel: factor names plus one record per DMU.
///
/// Immutable after construction; safe to share across concurrent solves.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub records: Vec<DmuRecord>,
}

impl Dataset {
    /// Number of DMUs.
    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Number of inputs (m).
    pub fn num_inputs(&self) -> usize {
        self.input_names.len()
    }

    /// Number of outputs (s).
    pub fn num_outputs(&self) -> usize {
        self.output_names.len()
    }

    pub fn input(&self, dmu: usize, factor: usize) -> f64 {
        self.records[dmu].inputs[factor]
    }

    pub fn output(&self, dmu: usize, factor: usize) -> f64 {
        self.records[dmu].outputs[factor]
    }

    pub fn id(&self, dmu: usize) -> &str {
        &self.records[dmu].id
    }

    /// Index of the DMU with the given id, if present.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    /// Parse a CSV document into a validated dataset.
    ///
    /// Rejections name the offending row and column.
    pub fn parse_csv(text: &str) -> Result<Dataset, DataError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());

        let mut rows = reader.records();
        let header = match rows.next() {
            Some(h) => h?,
            None => return Err(DataError::MissingHeader),
        };
        if header.is_empty() || header.get(0) != Some("dmu") {
            return Err(DataError::BadHeader(
                "first column must be headed \"dmu\"".into(),
            ));
        }

        let mut input_names = Vec::new();
        let mut output_names = Vec::new();
        // column index -> (is_input, factor index)
        let mut layout = Vec::new();
        for (c, name) in header.iter().enumerate().skip(1) {
            if let Some(stripped) = name.strip_prefix("in:") {
                if !output_names.is_empty() {
                    return Err(DataError::BadHeader(format!(
                        "input column {name:?} appears after an output column"
                    )));
                }
                layout.push((true, input_names.len()));
                input_names.push(stripped.to_string());
            } else if let Some(stripped) = name.strip_prefix("out:") {
                layout.push((false, output_names.len()));
                output_names.push(stripped.to_string());
            } else {
                return Err(DataError::BadHeader(format!(
                    "column {c} is headed {name:?}; expected an \"in:\" or \"out:\" prefix"
                )));
            }
        }
        if input_names.is_empty() {
            return Err(DataError::BadHeader("no input columns declared".into()));
        }
        if output_names.is_empty() {
            return Err(DataError::BadHeader("no output columns declared".into()));
        }

        let expected = 1 + layout.len();
        let mut records: Vec<DmuRecord> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        for (r, row) in rows.enumerate() {
            let row = row?;
            let rownum = r + 2; // 1-based, counting the header
            if row.len() == 1 && row.get(0) == Some("") {
                continue; // blank line
            }
            if row.len() != expected {
                return Err(DataError::FieldCount {
                    row: rownum,
                    expected,
                    found: row.len(),
                });
            }
            let id = row.get(0).unwrap_or("").to_string();
            if !seen.insert(id.clone()) {
                return Err(DataError::DuplicateId { row: rownum, id });
            }
            let mut inputs = vec![0.0; input_names.len()];
            let mut outputs = vec![0.0; output_names.len()];
            for (c, &(is_input, f)) in layout.iter().enumerate() {
                let cell = row.get(c + 1).unwrap_or("");
                let column = header.get(c + 1).unwrap_or("").to_string();
                let value: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                    row: rownum,
                    id: id.clone(),
                    column: column.clone(),
                    value: cell.to_string(),
                })?;
                if !(value > 0.0) || !value.is_finite() {
                    return Err(DataError::NonPositive {
                        row: rownum,
                        id: id.clone(),
                        column,
                        value,
                    });
                }
                if is_input {
                    inputs[f] = value;
                } else {
                    outputs[f] = value;
                }
            }
            records.push(DmuRecord { id, inputs, outputs });
        }
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Dataset {
            input_names,
            output_names,
            records,
        })
    }

    /// Serialize back to the CSV layout accepted by [`Dataset::parse_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dmu");
        for name in &self.input_names {
            out.push_str(",in:");
            out.push_str(name);
        }
        for name in &self.output_names {
            out.push_str(",out:");
            out.push_str(name);
        }
        out.push('\n');
        for rec in &self.records {
            out.push_str(&rec.id);
            for v in rec.inputs.iter().chain(rec.outputs.iter()) {
                out.push(',');
                // `{}` on f64 prints the shortest round-trip form
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Multiply factor column i of every record by `factors[i]`.
    ///
    /// Factors are indexed inputs first, then outputs. Used by the
    /// scale-invariance tests.
    pub fn rescale(&self, factors: &[f64]) -> Result<Dataset, DataError> {
        let m = self.num_inputs();
        let s = self.num_outputs();
        if factors.len() != m + s {
            return Err(DataError::FactorCount {
                expected: m + s,
                found: factors.len(),
            });
        }
        for (i, &f) in factors.iter().enumerate() {
            if !(f > 0.0) || !f.is_finite() {
                return Err(DataError::BadFactor { index: i, value: f });
            }
        }
        let records = self
            .records
            .iter()
            .map(|rec| DmuRecord {
                id: rec.id.clone(),
                inputs: rec
                    .inputs
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * factors[i])
                    .collect(),
                outputs: rec
                    .outputs
                    .iter()
                    .enumerate()
                    .map(|(r, v)| v * factors[m + r])
                    .collect(),
            })
            .collect();
        Ok(Dataset {
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
            records,
        })
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} DMUs, {} inputs, {} outputs",
            self.n(),
            self.num_inputs(),
            self.num_outputs()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const AIRLINE_HEADER: &str = "dmu,in:LAB,in:FUEL,in:MATL,in:CAP,out:PASS,out:CARGO";

    #[test]
    fn parses_singapore_row() {
        let text = format!("{AIRLINE_HEADER}\nSINGAPORE,10864,523,1512,4479,32404,1902\n");
        let d = Dataset::parse_csv(&text).unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.num_inputs(), 4);
        assert_eq!(d.num_outputs(), 2);
        let rec = &d.records[0];
        assert_eq!(rec.id, "SINGAPORE");
        assert_eq!(rec.inputs, vec![10864.0, 523.0, 1512.0, 4479.0]);
        assert_eq!(rec.outputs, vec![32404.0, 1902.0]);
    }

    #[test]
    fn single_all_ones_row_is_valid() {
        let d = Dataset::parse_csv("dmu,in:a,out:b\nu,1,1\n").unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.records[0].inputs, vec![1.0]);
    }

    #[test]
    fn zero_input_is_rejected_naming_row_and_column() {
        let err = Dataset::parse_csv("dmu,in:a,out:b\nu,0,1\n").unwrap_err();
        match err {
            DataError::NonPositive {
                row,
                column,
                value,
                ..
            } => {
                assert_eq!(row, 2);
                assert_eq!(column, "in:a");
                assert_eq!(value, 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn negative_output_is_rejected() {
        assert!(matches!(
            Dataset::parse_csv("dmu,in:a,out:b\nu,1,-3\n"),
            Err(DataError::NonPositive { .. })
        ));
    }

    #[test]
    fn non_numeric_cell_is_rejected() {
        let err = Dataset::parse_csv("dmu,in:a,out:b\nu,1,xyz\n").unwrap_err();
        match err {
            DataError::NonNumeric {
                row,
                column,
                value,
                ..
            } => {
                assert_eq!(row, 2);
                assert_eq!(column, "out:b");
                assert_eq!(value, "xyz");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        assert!(matches!(
            Dataset::parse_csv("dmu,in:a,out:b\nu,1,1\nu,2,2\n"),
            Err(DataError::DuplicateId { .. })
        ));
    }

    #[test]
    fn missing_header_is_rejected() {
        assert!(matches!(
            Dataset::parse_csv(""),
            Err(DataError::MissingHeader)
        ));
        assert!(matches!(
            Dataset::parse_csv("name,in:a,out:b\nu,1,1\n"),
            Err(DataError::BadHeader(_))
        ));
    }

    #[test]
    fn unprefixed_column_is_rejected() {
        assert!(matches!(
            Dataset::parse_csv("dmu,a,out:b\nu,1,1\n"),
            Err(DataError::BadHeader(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let text = format!(
            "{AIRLINE_HEADER}\nSINGAPORE,10864,523,1512,4479,32404,1902\nJAL,21430,1351,2536,17932,57290,3781\n"
        );
        let d = Dataset::parse_csv(&text).unwrap();
        let d2 = Dataset::parse_csv(&d.to_csv()).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn rescale_identity_and_inverse() {
        let d = Dataset::parse_csv("dmu,in:a,in:b,out:c\nu,2,3,4\nv,5,7,11\n").unwrap();
        let same = d.rescale(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d, same);

        let f = [1000.0, 0.25, 3.0];
        let scaled = d.rescale(&f).unwrap();
        assert_eq!(scaled.input(0, 0), 2000.0);
        assert_eq!(scaled.input(1, 0), 5000.0);
        let back = scaled
            .rescale(&[1.0 / f[0], 1.0 / f[1], 1.0 / f[2]])
            .unwrap();
        for j in 0..d.n() {
            for i in 0..d.num_inputs() {
                let a = d.input(j, i);
                let b = back.input(j, i);
                assert!(((a - b) / a).abs() < 1e-12);
            }
            for r in 0..d.num_outputs() {
                let a = d.output(j, r);
                let b = back.output(j, r);
                assert!(((a - b) / a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rescale_rejects_nonpositive_factor() {
        let d = Dataset::parse_csv("dmu,in:a,out:b\nu,1,1\n").unwrap();
        assert!(matches!(
            d.rescale(&[0.0, 1.0]),
            Err(DataError::BadFactor { index: 0, .. })
        ));
        assert!(matches!(
            d.rescale(&[1.0]),
            Err(DataError::FactorCount { .. })
        ));
    }
}
