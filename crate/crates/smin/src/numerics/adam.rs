use crate::error::{Result, SminError};
use crate::numerics::dense::DenseMatrix;

/// Per-parameter Adam accumulators.
#[derive(Clone, Debug)]
pub struct AdamState {
    first_moment: DenseMatrix,
    second_moment: DenseMatrix,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState {
            first_moment: DenseMatrix::zeros(rows, cols),
            second_moment: DenseMatrix::zeros(rows, cols),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction; advances `state` by one step.
pub fn adam_step(
    param: &mut DenseMatrix,
    grad: &DenseMatrix,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.first_moment.shape() {
        return Err(SminError::Dimension(format!(
            "adam_step param {:?} grad {:?} state {:?}",
            param.shape(),
            grad.shape(),
            state.first_moment.shape()
        )));
    }
    if lr <= 0.0 {
        return Err(SminError::Domain(format!("learning rate must be > 0, got {lr}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    let m = state.first_moment.values_mut();
    let v = state.second_moment.values_mut();
    let p = param.values_mut();
    for i in 0..p.len() {
        let g = grad.values()[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_param_unchanged() {
        let mut p = DenseMatrix::from_rows(&[vec![1.5, -2.0]]).unwrap();
        let g = DenseMatrix::zeros(1, 2);
        let mut st = AdamState::new(1, 2);
        adam_step(&mut p, &g, &mut st, 0.05).unwrap();
        assert_eq!(p.values(), &[1.5, -2.0]);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn first_step_unit_gradient() {
        // t=1, g=1, lr=0.05: m_hat = 1, v_hat = 1 -> update = -lr / (1 + eps).
        let mut p = DenseMatrix::scalar(0.0);
        let g = DenseMatrix::scalar(1.0);
        let mut st = AdamState::new(1, 1);
        adam_step(&mut p, &g, &mut st, 0.05).unwrap();
        assert!((p.item() + 0.05).abs() < 1e-9, "got {}", p.item());
    }

    #[test]
    fn deterministic_given_same_state() {
        let g = DenseMatrix::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let run = || {
            let mut p = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
            let mut st = AdamState::new(1, 2);
            for _ in 0..5 {
                adam_step(&mut p, &g, &mut st, 0.01).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = DenseMatrix::zeros(2, 2);
        let g = DenseMatrix::zeros(1, 2);
        let mut st = AdamState::new(2, 2);
        assert!(adam_step(&mut p, &g, &mut st, 0.1).is_err());
    }
}
