//! Dense/sparse linear algebra, elementwise nonlinearities, Adam, and the
//! reverse-mode tape that implements the differentiation contract.

pub mod adam;
pub mod dense;
pub mod fdcheck;
pub mod sparse;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use dense::DenseMatrix;
pub use fdcheck::{finite_diff_check, FdReport};
pub use sparse::{spgemm, spmm, SparseMatrix};
pub use tape::{BprTriple, Gradients, Tape, Var};

/// Elementwise PReLU: x if x >= 0 else slope * x.
pub fn prelu(x: &DenseMatrix, slope: f64) -> DenseMatrix {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prelu_cases() {
        let x = DenseMatrix::from_rows(&[vec![3.0, -2.0, 0.0]]).unwrap();
        let y = prelu(&x, 0.25);
        assert_eq!(y.values(), &[3.0, -0.5, 0.0]);
    }
}
