//! Plain-text and JSON encodings of dense matrices and vectors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Nested row-major rows.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Rows of space-separated decimals; blank lines and `#` comments ignored.
pub fn parse_text_matrix(text: &str) -> Result<DMatrix<f64>> {
    let rows = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad number {tok:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    from_rows(&rows)
}

/// Inverse of `parse_text_matrix`; `{:?}` on f64 is shortest round-trip.
pub fn format_text_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_text_vector(text: &str) -> Result<DVector<f64>> {
    let vals = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number {tok:?}: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DVector::from_vec(vals))
}

pub fn format_text_vector(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    parts.join(" ") + "\n"
}

/// `{"n": ..., "entries": [[...]]}` wire form of a square matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrixJson {
    pub n: usize,
    pub entries: Vec<Vec<f64>>,
}

impl SquareMatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            n: m.nrows(),
            entries: to_rows(m),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let m = from_rows(&self.entries)?;
        if m.nrows() != self.n || m.ncols() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: if m.nrows() != self.n { m.nrows() } else { m.ncols() },
            });
        }
        Ok(m)
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn csv_number(v: f64) -> String {
    format!("{v:.16e}")
}

/// `#[serde(with = "matrix_io::rows")]` for `DMatrix<f64>` fields.
pub mod rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// `#[serde(with = "matrix_io::rows_opt")]` for `Option<DMatrix<f64>>` fields.
pub mod rows_opt {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        m.as_ref().map(to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<DMatrix<f64>>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(|rows| from_rows(&rows).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// `#[serde(with = "matrix_io::vector")]` for `DVector<f64>` fields.
pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_matrix_parses_comments_and_rows() {
        let m = parse_text_matrix("# generator\n-1 1\n 2 -2\n\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]));
        assert!(parse_text_matrix("1 2\n3").is_err());
        assert!(parse_text_matrix("1 x").is_err());
    }

    #[test]
    fn text_matrix_round_trips_bit_exactly() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-17, 1e300]);
        let back = parse_text_matrix(&format_text_matrix(&m)).unwrap();
        assert_eq!(m, back);
        let v = DVector::from_vec(vec![0.1, 0.7, std::f64::consts::PI]);
        assert_eq!(parse_text_vector(&format_text_vector(&v)).unwrap(), v);
    }

    #[test]
    fn json_matrix_checks_dimension() {
        let j: SquareMatrixJson = serde_json::from_str(r#"{"n":2,"entries":[[1,2],[3,4]]}"#).unwrap();
        assert_eq!(j.to_matrix().unwrap()[(1, 0)], 3.0);
        let bad: SquareMatrixJson = serde_json::from_str(r#"{"n":3,"entries":[[1,2],[3,4]]}"#).unwrap();
        assert!(bad.to_matrix().is_err());
    }
}
