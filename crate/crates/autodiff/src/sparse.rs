use ndarray::Array2;

use crate::error::{AutodiffError, Result};

/// Compressed sparse row matrix with `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(AutodiffError::Invalid {
                    op: "csr",
                    msg: format!("entry ({r}, {c}) outside {rows}x{cols}"),
                });
            }
            sorted.push((r, c, v));
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut data: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            data.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Iterates `(col, value)` over the stored entries of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.data[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[[r, c]] += v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v)))
            .collect();
        Self::from_triplets(self.cols, self.rows, &triplets).expect("transpose stays in bounds")
    }

    /// `self * dense`.
    pub fn matmul_dense(&self, dense: &Array2<f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.cols {
            return Err(AutodiffError::Shape {
                op: "sparse_matmul",
                lhs: self.shape(),
                rhs: dense.dim(),
            });
        }
        let width = dense.ncols();
        let mut out = Array2::zeros((self.rows, width));
        for r in 0..self.rows {
            let mut out_row = out.row_mut(r);
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &dense.row(c));
            }
        }
        Ok(out)
    }

    /// `self^T * dense` without materialising the transpose.
    pub fn transpose_matmul_dense(&self, dense: &Array2<f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.rows {
            return Err(AutodiffError::Shape {
                op: "sparse_matmul_t",
                lhs: (self.cols, self.rows),
                rhs: dense.dim(),
            });
        }
        let width = dense.ncols();
        let mut out = Array2::zeros((self.cols, width));
        for r in 0..self.rows {
            let src = dense.row(r);
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &src);
            }
        }
        Ok(out)
    }
}
