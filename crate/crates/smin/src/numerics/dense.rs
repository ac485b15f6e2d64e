use rayon::prelude::*;

use crate::error::{Result, SminError};

/// Row blocks of this many rows are processed per rayon task. Fixed (not
/// thread-count dependent) so reductions happen in a fixed order and results
/// are bitwise reproducible on any machine.
const ROW_CHUNK: usize = 256;

/// Dense row-major matrix of 64-bit reals.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SminError::Dimension(format!(
                "expected {} values for {}x{}, got {}",
                rows * cols,
                rows,
                cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        if rows.iter().any(|v| v.len() != c) {
            return Err(SminError::Dimension("ragged row lengths".into()));
        }
        Ok(DenseMatrix {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn scalar(v: f64) -> Self {
        DenseMatrix {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (1, 1));
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale_in_place(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_assign_scaled(&mut self, other: &DenseMatrix, k: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(SminError::Dimension(format!(
                "add {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = self.clone();
        out.add_assign(other);
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * other`, (m,k) x (k,n) -> (m,n).
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(SminError::Dimension(format!(
                "matmul {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let n = other.cols;
        let mut out = DenseMatrix::zeros(self.rows, n);
        out.data
            .par_chunks_mut(ROW_CHUNK * n)
            .zip(self.data.par_chunks(ROW_CHUNK * self.cols))
            .for_each(|(out_block, a_block)| {
                for (out_row, a_row) in out_block.chunks_mut(n).zip(a_block.chunks(self.cols)) {
                    for (k, &a) in a_row.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let b_row = &other.data[k * n..(k + 1) * n];
                        for (o, &b) in out_row.iter_mut().zip(b_row) {
                            *o += a * b;
                        }
                    }
                }
            });
        Ok(out)
    }

    /// `self * other^T`, (m,k) x (n,k) -> (m,n).
    pub fn matmul_nt(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(SminError::Dimension(format!(
                "matmul_nt {:?} x {:?}^T",
                self.shape(),
                other.shape()
            )));
        }
        let n = other.rows;
        let k = self.cols;
        let mut out = DenseMatrix::zeros(self.rows, n);
        out.data
            .par_chunks_mut(ROW_CHUNK * n)
            .zip(self.data.par_chunks(ROW_CHUNK * k))
            .for_each(|(out_block, a_block)| {
                for (out_row, a_row) in out_block.chunks_mut(n).zip(a_block.chunks(k)) {
                    for (j, o) in out_row.iter_mut().enumerate() {
                        let b_row = &other.data[j * k..(j + 1) * k];
                        let mut acc = 0.0;
                        for (&a, &b) in a_row.iter().zip(b_row) {
                            acc += a * b;
                        }
                        *o = acc;
                    }
                }
            });
        Ok(out)
    }

    /// `self^T * other`, (k,m) x (k,n) -> (m,n).
    ///
    /// Parallelized over fixed-size row blocks of the shared `k` axis with an
    /// ordered partial-sum reduction, so the summation order is independent of
    /// the thread count.
    pub fn matmul_tn(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(SminError::Dimension(format!(
                "matmul_tn {:?}^T x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (m, n) = (self.cols, other.cols);
        let partials: Vec<DenseMatrix> = self
            .data
            .par_chunks(ROW_CHUNK * m)
            .zip(other.data.par_chunks(ROW_CHUNK * n))
            .map(|(a_block, b_block)| {
                let mut part = DenseMatrix::zeros(m, n);
                for (a_row, b_row) in a_block.chunks(m).zip(b_block.chunks(n)) {
                    for (i, &a) in a_row.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let out_row = &mut part.data[i * n..(i + 1) * n];
                        for (o, &b) in out_row.iter_mut().zip(b_row) {
                            *o += a * b;
                        }
                    }
                }
                part
            })
            .collect();
        let mut out = DenseMatrix::zeros(m, n);
        for part in &partials {
            out.add_assign(part);
        }
        Ok(out)
    }

    /// Sum over rows, producing a 1 x cols matrix.
    pub fn column_sums(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(1, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for (o, &v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.values(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn transposed_variants_agree() {
        let a = DenseMatrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![-1.0, 0.0], vec![4.0, 2.0]]).unwrap();

        let nt = a.matmul_nt(&b.transpose()).unwrap();
        assert_eq!(nt.values(), a.matmul(&b).unwrap().values());

        let c = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![-2.0, 1.5]]).unwrap();
        let tn = a.matmul_tn(&c).unwrap();
        assert_eq!(tn.values(), a.transpose().matmul(&c).unwrap().values());
    }

    #[test]
    fn column_sums_sum_rows() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(a.column_sums().values(), &[9.0, 12.0]);
    }
}
