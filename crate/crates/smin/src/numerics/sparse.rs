use rayon::prelude::*;

use crate::error::{Result, SminError};
use crate::numerics::dense::DenseMatrix;

const ROW_CHUNK: usize = 256;

/// Row-compressed sparse matrix in canonical form: per-row column indices
/// strictly increasing, no duplicate coordinates, no stored zeros. Iterating
/// entries therefore yields (row, col) pairs in sorted order.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds the canonical form from (row, col, value) triplets. Duplicate
    /// coordinates are summed; entries that end up exactly zero are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(SminError::Dimension(format!(
                    "entry ({r},{c}) out of range for {rows}x{cols}"
                )));
            }
            entries.push((r, c, v));
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut i = 0;
        while i < entries.len() {
            let (r, c, mut v) = entries[i];
            i += 1;
            while i < entries.len() && entries[i].0 == r && entries[i].1 == c {
                v += entries[i].2;
                i += 1;
            }
            if v != 0.0 {
                indptr[r + 1] += 1;
                indices.push(c);
                values.push(v);
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
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

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    /// Entries in canonical (row, col) order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter()
                .zip(vals)
                .map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).1.iter().sum())
            .collect()
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn transpose(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(self.cols, self.rows, self.iter().map(|(r, c, v)| (c, r, v)))
            .expect("transpose of a valid matrix is valid")
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.rows,
            self.cols,
            self.iter().map(|(r, c, v)| (r, c, f(v))),
        )
        .expect("shape unchanged")
    }

    /// Every stored entry becomes 1.0.
    pub fn binarize(&self) -> SparseMatrix {
        self.map_values(|_| 1.0)
    }

    pub fn without_diagonal(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.rows,
            self.cols,
            self.iter().filter(|&(r, c, _)| r != c),
        )
        .expect("shape unchanged")
    }

    pub fn add(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.shape() != other.shape() {
            return Err(SminError::Dimension(format!(
                "sparse add {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        SparseMatrix::from_triplets(self.rows, self.cols, self.iter().chain(other.iter()))
    }

    pub fn is_symmetric(&self) -> bool {
        self.iter().all(|(r, c, v)| self.get(c, r) == v)
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 1.0)
    }

    /// Sparse x dense product, (m,k) x (k,n) -> dense (m,n).
    pub fn spmm(&self, dense: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != dense.rows() {
            return Err(SminError::Dimension(format!(
                "spmm {:?} x {:?}",
                self.shape(),
                dense.shape()
            )));
        }
        let n = dense.cols();
        let mut out = DenseMatrix::zeros(self.rows, n);
        out.values_mut()
            .par_chunks_mut(ROW_CHUNK * n)
            .enumerate()
            .for_each(|(block, out_block)| {
                let base = block * ROW_CHUNK;
                for (i, out_row) in out_block.chunks_mut(n).enumerate() {
                    let (cols, vals) = self.row(base + i);
                    for (&c, &v) in cols.iter().zip(vals) {
                        let src = dense.row(c);
                        for (o, &s) in out_row.iter_mut().zip(src) {
                            *o += v * s;
                        }
                    }
                }
            });
        Ok(out)
    }

    /// Sparse x sparse product in canonical form (Gustavson row-wise with a
    /// dense accumulator per row block).
    pub fn spgemm(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(SminError::Dimension(format!(
                "spgemm {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let n = other.cols;
        let row_blocks: Vec<Vec<(usize, usize, f64)>> = (0..self.rows)
            .collect::<Vec<_>>()
            .par_chunks(ROW_CHUNK)
            .map(|rows| {
                let mut acc = vec![0.0f64; n];
                let mut seen = vec![false; n];
                let mut touched: Vec<usize> = Vec::new();
                let mut out = Vec::new();
                for &r in rows {
                    let (cols, vals) = self.row(r);
                    for (&k, &v) in cols.iter().zip(vals) {
                        let (bcols, bvals) = other.row(k);
                        for (&c, &bv) in bcols.iter().zip(bvals) {
                            if !seen[c] {
                                seen[c] = true;
                                touched.push(c);
                            }
                            acc[c] += v * bv;
                        }
                    }
                    touched.sort_unstable();
                    for &c in &touched {
                        if acc[c] != 0.0 {
                            out.push((r, c, acc[c]));
                        }
                        acc[c] = 0.0;
                        seen[c] = false;
                    }
                    touched.clear();
                }
                out
            })
            .collect();
        SparseMatrix::from_triplets(self.rows, n, row_blocks.into_iter().flatten())
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            out.set(r, c, v);
        }
        out
    }
}

/// `a * b` for sparse `a`, dense `b`.
pub fn spmm(a: &SparseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    a.spmm(b)
}

/// `a * b` for sparse `a`, sparse `b`.
pub fn spgemm(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    a.spgemm(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spmm_identity() {
        let i = SparseMatrix::identity(2);
        let b = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(i.spmm(&b).unwrap().values(), b.values());
    }

    #[test]
    fn spmm_zero_annihilates() {
        let z = SparseMatrix::empty(3, 2);
        let b = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = z.spmm(&b).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spmm_hand_case() {
        // a = {(0,1,2.0)} (1x2), b = [[1],[3]] -> [[6.0]]
        let a = SparseMatrix::from_triplets(1, 2, [(0, 1, 2.0)]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(a.spmm(&b).unwrap().values(), &[6.0]);
    }

    #[test]
    fn spmm_shape_mismatch() {
        let a = SparseMatrix::empty(2, 3);
        let b = DenseMatrix::zeros(2, 2);
        assert!(a.spmm(&b).is_err());
    }

    #[test]
    fn spgemm_permutation_times_transpose_is_identity() {
        let p = SparseMatrix::from_triplets(3, 3, [(0, 2, 1.0), (1, 0, 1.0), (2, 1, 1.0)]).unwrap();
        let prod = p.spgemm(&p.transpose()).unwrap();
        assert_eq!(prod, SparseMatrix::identity(3));
    }

    #[test]
    fn spgemm_empty_annihilates() {
        let e = SparseMatrix::empty(2, 4);
        let b = SparseMatrix::from_triplets(4, 2, [(0, 0, 1.0), (3, 1, 2.0)]).unwrap();
        let prod = e.spgemm(&b).unwrap();
        assert_eq!(prod.nnz(), 0);
    }

    #[test]
    fn spgemm_shape_mismatch() {
        let a = SparseMatrix::empty(2, 3);
        let b = SparseMatrix::empty(2, 3);
        assert!(a.spgemm(&b).is_err());
    }

    #[test]
    fn from_triplets_sums_duplicates_and_drops_zeros() {
        let m = SparseMatrix::from_triplets(
            2,
            2,
            [(0, 0, 1.0), (0, 0, 2.0), (1, 1, 3.0), (1, 1, -3.0), (1, 0, 0.0)],
        )
        .unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
    }

    #[test]
    fn from_triplets_rejects_out_of_range() {
        assert!(SparseMatrix::from_triplets(2, 2, [(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn canonical_iteration_order() {
        let m = SparseMatrix::from_triplets(2, 3, [(1, 2, 1.0), (0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let order: Vec<(usize, usize)> = m.iter().map(|(r, c, _)| (r, c)).collect();
        assert_eq!(order, vec![(0, 1), (1, 0), (1, 2)]);
    }
}
