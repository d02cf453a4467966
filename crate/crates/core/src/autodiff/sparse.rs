use ndarray::Array2;

/// Constant sparse matrix in compressed-row form.
///
/// Used to express finite-difference stencils and row selections as a fixed
/// linear map over model outputs, so the stencil weights never enter the
/// gradient tape as trainable quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    /// Appends a row given as `(column, coefficient)` pairs.
    ///
    /// Panics if a column index is out of range; stencil builders construct
    /// indices from the batch they were built against.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        for &(c, v) in entries {
            assert!(c < self.ncols, "sparse column {c} out of range {}", self.ncols);
            self.indices.push(c);
            self.values.push(v);
        }
        self.indptr.push(self.indices.len());
    }

    /// Row selection matrix: row `k` picks column `rows[k]`.
    pub fn selection(ncols: usize, rows: &[usize]) -> Self {
        let mut m = Self::new(ncols);
        for &r in rows {
            m.push_row(&[(r, 1.0)]);
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        self.indices[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    /// `self · a` for a dense `a` with `ncols` rows.
    pub fn apply(&self, a: &Array2<f64>) -> Array2<f64> {
        debug_assert_eq!(a.nrows(), self.ncols);
        let m = a.ncols();
        let mut out = Array2::zeros((self.nrows(), m));
        for r in 0..self.nrows() {
            for (c, v) in self.row(r) {
                for j in 0..m {
                    out[[r, j]] += v * a[[c, j]];
                }
            }
        }
        out
    }

    /// Accumulates `selfᵀ · g` into `acc`.
    pub fn apply_transpose_into(&self, g: &Array2<f64>, acc: &mut Array2<f64>) {
        let m = g.ncols();
        for r in 0..self.nrows() {
            for (c, v) in self.row(r) {
                for j in 0..m {
                    acc[[c, j]] += v * g[[r, j]];
                }
            }
        }
    }

    /// Applies the map to a plain column of values.
    pub fn apply_vec(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.ncols);
        (0..self.nrows()).map(|r| self.row(r).map(|(c, v)| v * u[c]).sum()).collect()
    }
}
