//! Central-difference gradient verification.
//!
//! The checker is deliberately independent of the tape: it only re-evaluates a
//! scalar loss at perturbed parameter values, so it can certify any gradient
//! implementation handed to it.

use crate::error::{Result, SminError};
use crate::numerics::dense::DenseMatrix;

/// Comparison outcome for one named parameter tensor.
#[derive(Clone, Debug)]
pub struct FdEntry {
    pub name: String,
    /// Largest |fd - analytic| over the tensor's entries.
    pub max_abs_diff: f64,
    /// max_abs_diff relative to max(|fd|_inf, |analytic|_inf).
    pub rel_err: f64,
    pub analytic_inf_norm: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.rel_err))
    }

    pub fn max_abs_diff(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_abs_diff))
    }

    pub fn worst(&self) -> Option<&FdEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Compares analytic gradients against central differences of `loss`.
///
/// `tensors` holds the evaluation point; it is perturbed entry by entry and
/// restored before returning. `analytic` must be aligned with `tensors` by
/// position and name.
pub fn finite_diff_check<F>(
    tensors: &mut [(String, DenseMatrix)],
    mut loss: F,
    analytic: &[(String, DenseMatrix)],
    step: f64,
) -> Result<FdReport>
where
    F: FnMut(&[(String, DenseMatrix)]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(SminError::Domain(format!("step must be > 0, got {step}")));
    }
    if tensors.len() != analytic.len() {
        return Err(SminError::Dimension(format!(
            "{} tensors vs {} analytic gradients",
            tensors.len(),
            analytic.len()
        )));
    }
    let mut entries = Vec::with_capacity(tensors.len());
    for ti in 0..tensors.len() {
        let (ref name, ref an) = analytic[ti];
        if name != &tensors[ti].0 || an.shape() != tensors[ti].1.shape() {
            return Err(SminError::Dimension(format!(
                "analytic gradient '{name}' does not match tensor '{}'",
                tensors[ti].0
            )));
        }
        let len = tensors[ti].1.values().len();
        let mut max_abs_diff = 0.0f64;
        let mut fd_inf = 0.0f64;
        for i in 0..len {
            let orig = tensors[ti].1.values()[i];
            tensors[ti].1.values_mut()[i] = orig + step;
            let f_plus = loss(tensors)?;
            tensors[ti].1.values_mut()[i] = orig - step;
            let f_minus = loss(tensors)?;
            tensors[ti].1.values_mut()[i] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(SminError::Numeric(format!(
                    "non-finite loss while perturbing '{}'",
                    tensors[ti].0
                )));
            }
            let fd = (f_plus - f_minus) / (2.0 * step);
            fd_inf = fd_inf.max(fd.abs());
            max_abs_diff = max_abs_diff.max((fd - analytic[ti].1.values()[i]).abs());
        }
        let an_inf = analytic[ti].1.max_abs();
        let denom = fd_inf.max(an_inf);
        let rel_err = if denom > 1e-12 { max_abs_diff / denom } else { 0.0 };
        entries.push(FdEntry {
            name: tensors[ti].0.clone(),
            max_abs_diff,
            rel_err,
            analytic_inf_norm: an_inf,
        });
    }
    Ok(FdReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        // loss = 0.5 ||W||^2, analytic grad = W.
        let w = DenseMatrix::from_rows(&[vec![1.3, -0.7], vec![0.2, 2.5]]).unwrap();
        let mut tensors = vec![("w".to_string(), w.clone())];
        let analytic = vec![("w".to_string(), w)];
        let report = finite_diff_check(
            &mut tensors,
            |ts| Ok(0.5 * ts[0].1.sum_squares()),
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-8, "rel {}", report.max_rel_err());
    }

    #[test]
    fn constant_loss_gradient_vanishes() {
        let mut tensors = vec![("w".to_string(), DenseMatrix::zeros(2, 2))];
        let analytic = vec![("w".to_string(), DenseMatrix::zeros(2, 2))];
        let step = 1e-5;
        let report =
            finite_diff_check(&mut tensors, |_| Ok(4.2), &analytic, step).unwrap();
        assert!(report.max_abs_diff() < step * step);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut tensors = vec![("w".to_string(), DenseMatrix::zeros(1, 1))];
        let analytic = vec![("w".to_string(), DenseMatrix::zeros(1, 1))];
        let err = finite_diff_check(&mut tensors, |_| Ok(f64::NAN), &analytic, 1e-5);
        assert!(err.is_err());
    }

    #[test]
    fn detects_wrong_gradient() {
        let w = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut tensors = vec![("w".to_string(), w.clone())];
        let wrong = vec![("w".to_string(), w.map(|v| 3.0 * v))];
        let report = finite_diff_check(
            &mut tensors,
            |ts| Ok(0.5 * ts[0].1.sum_squares()),
            &wrong,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err() > 0.5);
    }
}
