use crate::autodiff::Tensor;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) row_ptr: Vec<usize>,
    pub(crate) col_idx: Vec<usize>,
    pub(crate) values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from (row, col, value) entries, summing duplicates.
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    /// `self * x` for a dense `cols x C` matrix.
    pub fn mul_dense(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.rows(), self.cols, "sparse product shape mismatch");
        let ch = x.cols();
        let mut out = Tensor::zeros(self.rows, ch);
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            let o = out.row_mut(i);
            for (&j, &a) in c.iter().zip(v) {
                for (oo, xx) in o.iter_mut().zip(x.row(j)) {
                    *oo += a * xx;
                }
            }
        }
        out
    }

    /// `selfᵀ * x` for a dense `rows x C` matrix.
    pub fn transpose_mul_dense(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.rows(), self.rows, "sparse product shape mismatch");
        let ch = x.cols();
        let mut out = Tensor::zeros(self.cols, ch);
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            let xi = x.row(i);
            for (&j, &a) in c.iter().zip(v) {
                for (oo, xx) in out.row_mut(j).iter_mut().zip(xi) {
                    *oo += a * xx;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                t.set(i, j, a);
            }
        }
        t
    }
}
