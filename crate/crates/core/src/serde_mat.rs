//! Row-major nested-array (de)serialization for nalgebra matrices.

use nalgebra::{DMatrix, DVector};
use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Builds a matrix from rows; `cols` fixes the width when there are no rows.
pub fn from_rows(rows: &[Vec<f64>], cols: Option<usize>) -> Result<DMatrix<f64>, String> {
    let c = rows.first().map(|r| r.len()).or(cols).unwrap_or(0);
    if rows.iter().any(|r| r.len() != c) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

/// Matrices are written as `{"rows": r, "cols": c, "data": [[..], ..]}` so empty
/// shapes survive a round trip.
#[derive(Serialize, Deserialize)]
struct Shaped {
    rows: usize,
    cols: usize,
    data: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyMatrix {
    Shaped(Shaped),
    Rows(Vec<Vec<f64>>),
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    Shaped {
        rows: m.nrows(),
        cols: m.ncols(),
        data: to_rows(m),
    }
    .serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    match AnyMatrix::deserialize(d)? {
        AnyMatrix::Shaped(s) => {
            if s.data.len() != s.rows {
                return Err(D::Error::custom("row count mismatch"));
            }
            from_rows(&s.data, Some(s.cols)).map_err(D::Error::custom).and_then(|m| {
                if m.ncols() == s.cols {
                    Ok(m)
                } else {
                    Err(D::Error::custom("column count mismatch"))
                }
            })
        }
        AnyMatrix::Rows(r) => from_rows(&r, None).map_err(D::Error::custom),
    }
}

pub mod list {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Shaped> = ms
            .iter()
            .map(|m| Shaped {
                rows: m.nrows(),
                cols: m.ncols(),
                data: to_rows(m),
            })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let v = Vec::<Shaped>::deserialize(d)?;
        v.into_iter()
            .map(|s| from_rows(&s.data, Some(s.cols)).map_err(D::Error::custom))
            .collect()
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
