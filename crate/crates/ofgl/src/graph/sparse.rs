//! CSR sparse real matrix used for normalized adjacencies.

use ndarray::Array2;

/// Sparse real matrix in compressed row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_csr(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(offsets.len(), rows + 1);
        debug_assert_eq!(indices.len(), values.len());
        SparseMatrix {
            rows,
            cols,
            offsets,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Entry `(i, j)`; zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.offsets[i];
        let hi = self.offsets[i + 1];
        match self.indices[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.offsets[i];
        let hi = self.offsets[i + 1];
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    /// `self * dense`.
    pub fn mul_dense(&self, dense: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.cols, dense.nrows(), "spmm dimension mismatch");
        let k = dense.ncols();
        let mut out = Array2::zeros((self.rows, k));
        for i in 0..self.rows {
            let lo = self.offsets[i];
            let hi = self.offsets[i + 1];
            let mut out_row = out.row_mut(i);
            for idx in lo..hi {
                let j = self.indices[idx];
                let v = self.values[idx];
                let src = dense.row(j);
                for c in 0..k {
                    out_row[c] += v * src[c];
                }
            }
        }
        out
    }

    /// `self^power * dense` by repeated application; `power = 0` is a copy.
    pub fn pow_mul(&self, power: usize, dense: &Array2<f64>) -> Array2<f64> {
        let mut acc = dense.clone();
        for _ in 0..power {
            acc = self.mul_dense(&acc);
        }
        acc
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                out[(i, j)] = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_by_two() -> SparseMatrix {
        // [[0.5, 0.5], [0.5, 0.5]]
        SparseMatrix::from_csr(2, 2, vec![0, 2, 4], vec![0, 1, 0, 1], vec![0.5; 4])
    }

    #[test]
    fn mul_dense_matches_dense_product() {
        let m = two_by_two();
        let x = array![[1.0], [0.0]];
        let y = m.mul_dense(&x);
        assert_eq!(y, array![[0.5], [0.5]]);
    }

    #[test]
    fn pow_zero_is_identity() {
        let m = two_by_two();
        let x = array![[3.0], [-1.0]];
        assert_eq!(m.pow_mul(0, &x), x);
    }

    #[test]
    fn get_returns_zero_for_missing() {
        let m = SparseMatrix::from_csr(2, 2, vec![0, 1, 1], vec![1], vec![2.0]);
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(1, 0), 0.0);
    }
}
