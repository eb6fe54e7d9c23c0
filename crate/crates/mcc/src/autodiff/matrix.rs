//! Dense row-major matrix of 64-bit reals.
//!
//! This is the single numeric container of the crate: logits, probabilities,
//! confusion matrices and network parameters are all `Matrix` values. The
//! type is value-semantic; tape-recorded variants of these operations live
//! in [`crate::autodiff::tape`].

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Inputs below this floor are clamped before taking a logarithm.
pub const LOG_CLAMP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data; the length must be `rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Parameter {
                name: "data",
                message: format!(
                    "expected {} entries for a {rows}x{cols} matrix, got {}",
                    rows * cols,
                    data.len()
                ),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a 1-row matrix from a slice.
    pub fn row_vector(values: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// Builds a 1-column matrix from a slice.
    pub fn column_vector(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// One-hot encoding of class labels, one row per label.
    pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut m = Matrix::zeros(labels.len(), num_classes);
        for (i, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(Error::Index(format!(
                    "label {label} at row {i} exceeds class count {num_classes}"
                )));
            }
            m.data[i * num_classes + label] = 1.0;
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    /// Value of a 1x1 matrix.
    pub fn scalar(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "expected a 1x1 matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(op, self.shape(), other.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "sub", |a, b| a - b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "mul", |a, b| a * b)
    }

    /// Elementwise division. Zero divisor entries yield +/-inf here; the
    /// tape-recorded variant rejects them instead.
    pub fn div_elem(&self, other: &Matrix) -> Result<Matrix> {
        self.zip(other, "div", |a, b| a / b)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        self.map(|v| v * factor)
    }

    pub fn add_scalar(&self, value: f64) -> Matrix {
        self.map(|v| v + value)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dimension("matmul", self.shape(), other.shape()));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let lhs_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in lhs_row.iter().enumerate() {
                let rhs_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: out,
        })
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Per-row sums as an n x 1 column.
    pub fn row_sums(&self) -> Matrix {
        let data = (0..self.rows).map(|i| self.row(i).iter().sum()).collect();
        Matrix {
            rows: self.rows,
            cols: 1,
            data,
        }
    }

    /// Per-column sums as a 1 x m row.
    pub fn col_sums(&self) -> Matrix {
        let mut data = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, &v) in data.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        Matrix {
            rows: 1,
            cols: self.cols,
            data,
        }
    }

    /// Temperature-rescaled softmax of every row, stabilized by per-row max
    /// subtraction. Equals the vanilla softmax at `temperature == 1`.
    pub fn softmax_rows(&self, temperature: f64) -> Result<Matrix> {
        if !(temperature > 0.0) {
            return Err(Error::Parameter {
                name: "temperature",
                message: format!("must be > 0, got {temperature}"),
            });
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = &mut out.data[i * self.cols..(i + 1) * self.cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = ((*v - max) / temperature).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(out)
    }

    /// Index of the largest entry in each row (first on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Largest absolute entry difference against another matrix of the same
    /// shape.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::dimension("max_abs_diff", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Row-wise concatenation; both matrices must share a column count.
    pub fn concat_rows(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dimension("concat_rows", self.shape(), other.shape()));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Copy of the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::Index(format!(
                    "row {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }
}

// Serialized as nested row arrays so reports stay readable.
impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = (0..self.rows).map(|i| self.row(i)).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for row in &rows {
            if row.len() != ncols {
                return Err(D::Error::custom("ragged matrix rows"));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: nrows,
            cols: ncols,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_passes_through() {
        let x = mat(3, 4, &(0..12).map(|v| v as f64).collect::<Vec<_>>());
        let id = Matrix::identity(3);
        assert_eq!(id.matmul(&x).unwrap(), x);
    }

    #[test]
    fn matmul_hand_checkable() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = mat(2, 1, &[0.0, 1.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, mat(2, 1, &[2.0, 4.0]));
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        // Fixed pseudo-random 5x4 and 4x3 operands.
        let mut state = 0x2545f4914f6cdd1du64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / (1u64 << 31) as f64 - 1.0
        };
        let a = Matrix::from_fn(5, 4, |_, _| next());
        let b = Matrix::from_fn(4, 3, |_, _| next());
        let c = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut expected = 0.0;
                for k in 0..4 {
                    expected += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "message: {msg}");
    }

    #[test]
    fn softmax_symmetry_and_analytic_values() {
        let z = mat(1, 2, &[0.0, 0.0]);
        let p = z.softmax_rows(1.0).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);

        let z = mat(1, 2, &[2.0_f64.ln(), 0.0]);
        let p = z.softmax_rows(1.0).unwrap();
        assert!((p.get(0, 0) - 2.0 / 3.0).abs() <= 1e-15);
        assert!((p.get(0, 1) - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn softmax_high_temperature_is_uniform() {
        let z = mat(1, 4, &[3.0, -1.0, 7.5, 0.25]);
        let p = z.softmax_rows(1e6).unwrap();
        for j in 0..4 {
            assert!((p.get(0, j) - 0.25).abs() <= 1e-4);
        }
    }

    #[test]
    fn softmax_rejects_nonpositive_temperature() {
        let z = Matrix::zeros(1, 2);
        assert!(z.softmax_rows(0.0).is_err());
        assert!(z.softmax_rows(-1.0).is_err());
    }

    #[test]
    fn reductions() {
        let m = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.sum(), 10.0);
        assert_eq!(m.row_sums(), mat(2, 1, &[3.0, 7.0]));
        assert_eq!(m.col_sums(), mat(1, 2, &[4.0, 6.0]));
        assert_eq!(m.trace(), 5.0);
    }

    #[test]
    fn one_hot_rejects_out_of_range_labels() {
        assert!(Matrix::one_hot(&[0, 3], 3).is_err());
        let m = Matrix::one_hot(&[2, 0], 3).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(m.row(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn serde_round_trip() {
        let m = mat(2, 3, &[1.5, -2.0, 0.25, 0.0, 1e-9, 7.0]);
        let json = serde_json::to_string(&m).unwrap();
        let back: Matrix = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }
}
