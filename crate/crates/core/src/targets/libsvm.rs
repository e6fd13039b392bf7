//! Reader and writer for the libsvm sparse text format:
//! `<label> <index>:<value> <index>:<value> ...` with 1-based indices.

use std::io::BufRead;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

impl ParseError {
    fn new(line: usize, msg: impl Into<String>) -> Self {
        ParseError {
            line,
            msg: msg.into(),
        }
    }
}

/// One sparse row; indices are 0-based and strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

/// A binary classification dataset with labels in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    pub rows: Vec<SparseRow>,
    pub labels: Vec<i8>,
    pub features: usize,
}

impl SparseDataset {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Keeps only the first `n` rows (feature count unchanged).
    pub fn truncate(&mut self, n: usize) {
        self.rows.truncate(n);
        self.labels.truncate(n);
    }
}

/// Parses libsvm-formatted text. Indices are 1-based in the file and converted
/// to 0-based; labels 0/1 are remapped to -1/+1; blank lines are skipped.
/// The feature count is the largest index seen unless `features_override`
/// supplies a wider layout (test splits can omit trailing indices).
pub fn parse_libsvm<R: BufRead>(
    reader: R,
    features_override: Option<usize>,
) -> Result<SparseDataset, ParseError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_index: usize = 0;

    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line.map_err(|e| ParseError::new(line_no, format!("read error: {e}")))?;
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue; // blank line
        };

        let label_num: f64 = label_tok
            .parse()
            .map_err(|_| ParseError::new(line_no, format!("unparseable label {label_tok:?}")))?;
        let label: i8 = if label_num == 1.0 {
            1
        } else if label_num == -1.0 || label_num == 0.0 {
            -1
        } else {
            return Err(ParseError::new(
                line_no,
                format!("label {label_num} is not in {{-1, 0, +1}}"),
            ));
        };

        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut prev: Option<u32> = None;
        for tok in tokens {
            let (idx_str, val_str) = tok
                .split_once(':')
                .ok_or_else(|| ParseError::new(line_no, format!("malformed entry {tok:?}")))?;
            let idx1: u32 = idx_str
                .parse()
                .map_err(|_| ParseError::new(line_no, format!("unparseable index {idx_str:?}")))?;
            if idx1 == 0 {
                return Err(ParseError::new(line_no, "indices are 1-based; found 0"));
            }
            let idx = idx1 - 1;
            if let Some(p) = prev {
                if idx <= p {
                    return Err(ParseError::new(
                        line_no,
                        format!("indices not strictly increasing at {idx1}"),
                    ));
                }
            }
            prev = Some(idx);
            let val: f64 = val_str
                .parse()
                .map_err(|_| ParseError::new(line_no, format!("unparseable value {val_str:?}")))?;
            max_index = max_index.max(idx as usize + 1);
            indices.push(idx);
            values.push(val);
        }

        rows.push(SparseRow { indices, values });
        labels.push(label);
    }

    let features = match features_override {
        Some(f) => {
            if f < max_index {
                return Err(ParseError::new(
                    0,
                    format!("feature override {f} is below the largest index {max_index}"),
                ));
            }
            f
        }
        None => max_index,
    };

    Ok(SparseDataset {
        rows,
        labels,
        features,
    })
}

/// Writes a dataset back out in libsvm format (1-based indices).
pub fn serialize_libsvm(data: &SparseDataset) -> String {
    let mut out = String::new();
    for (row, &label) in data.rows.iter().zip(&data.labels) {
        out.push_str(if label > 0 { "+1" } else { "-1" });
        for (&idx, &val) in row.indices.iter().zip(&row.values) {
            out.push_str(&format!(" {}:{}", idx + 1, val));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn format_definition() {
        let d = parse_libsvm("+1 3:1 11:1\n".as_bytes(), None).unwrap();
        assert_eq!(d.labels, vec![1]);
        assert_eq!(d.rows[0].indices, vec![2, 10]);
        assert_eq!(d.rows[0].values, vec![1.0, 1.0]);
        assert_eq!(d.features, 11);
    }

    #[test]
    fn label_only_row_and_zero_remap() {
        let d = parse_libsvm("-1\n".as_bytes(), None).unwrap();
        assert_eq!(d.labels, vec![-1]);
        assert!(d.rows[0].indices.is_empty());

        let d = parse_libsvm("0 1:2.5\n".as_bytes(), None).unwrap();
        assert_eq!(d.labels, vec![-1]);
        assert_eq!(d.rows[0].indices, vec![0]);
        assert_eq!(d.rows[0].values, vec![2.5]);
    }

    #[test]
    fn blank_lines_are_skipped() {
        let d = parse_libsvm("+1 1:1\n\n  \n-1 2:3\n".as_bytes(), None).unwrap();
        assert_eq!(d.n_rows(), 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_libsvm("+1 1:1\n+1 5:1 3:1\n".as_bytes(), None).unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.msg.contains("strictly increasing"));

        let err = parse_libsvm("+1 x:1\n".as_bytes(), None).unwrap_err();
        assert_eq!(err.line, 1);

        let err = parse_libsvm("2 1:1\n".as_bytes(), None).unwrap_err();
        assert!(err.msg.contains("label"));

        assert!(parse_libsvm("+1 3:1\n".as_bytes(), Some(2)).is_err());
    }

    fn dataset_strategy() -> impl Strategy<Value = SparseDataset> {
        let row = (
            proptest::collection::btree_set(0u32..40, 0..8),
            any::<bool>(),
        )
            .prop_flat_map(|(idx_set, label)| {
                let indices: Vec<u32> = idx_set.into_iter().collect();
                let n = indices.len();
                (
                    Just(indices),
                    proptest::collection::vec(-10.0f64..10.0, n..=n),
                    Just(label),
                )
            });
        proptest::collection::vec(row, 1..12).prop_map(|rows| {
            let mut max_index = 0usize;
            let mut out_rows = Vec::new();
            let mut labels = Vec::new();
            for (indices, values, label) in rows {
                if let Some(&m) = indices.last() {
                    max_index = max_index.max(m as usize + 1);
                }
                out_rows.push(SparseRow { indices, values });
                labels.push(if label { 1 } else { -1 });
            }
            SparseDataset {
                rows: out_rows,
                labels,
                features: max_index,
            }
        })
    }

    proptest! {
        /// parse ∘ serialize is the identity on datasets.
        #[test]
        fn serialize_parse_round_trip(data in dataset_strategy()) {
            let text = serialize_libsvm(&data);
            let parsed = parse_libsvm(text.as_bytes(), Some(data.features)).unwrap();
            prop_assert_eq!(parsed, data);
        }
    }
}
