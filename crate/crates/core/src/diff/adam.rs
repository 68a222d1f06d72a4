//! Adam optimizer state and update step.

use super::{DiffError, ParamSet, Tensor};

/// Per-parameter first/second moment accumulators plus hyperparameters.
#[derive(Debug, Clone)]
pub struct OptState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptState {
    /// Defaults: lr 1e-3, betas (0.9, 0.999), eps 1e-8.
    pub fn new(ps: &ParamSet, lr: f64) -> Self {
        OptState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: ps
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape().to_vec()))
                .collect(),
            v: ps
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape().to_vec()))
                .collect(),
        }
    }
}

/// One Adam update from the populated gradient slots. Gradients are zeroed
/// afterwards and the step counter advances.
pub fn opt_step(ps: &mut ParamSet, st: &mut OptState) -> Result<(), DiffError> {
    if !ps.grads_populated() {
        return Err(DiffError::State(
            "opt_step called before backward populated gradients".into(),
        ));
    }
    if st.m.len() != ps.len() {
        return Err(DiffError::State(
            "optimizer state does not match parameter set".into(),
        ));
    }
    st.step += 1;
    let t = st.step as i32;
    let bc1 = 1.0 - st.beta1.powi(t);
    let bc2 = 1.0 - st.beta2.powi(t);
    for (idx, entry) in ps.entries.iter_mut().enumerate() {
        let m = st.m[idx].data_mut();
        let v = st.v[idx].data_mut();
        let w = entry.value.data_mut();
        let g = entry.grad.data();
        for i in 0..w.len() {
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= st.lr * m_hat / (v_hat.sqrt() + st.eps);
        }
    }
    ps.zero_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{Tape, Tensor};

    fn scalar_params(w: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::scalar(w)).unwrap();
        ps
    }

    #[test]
    fn step_without_gradients_is_state_error() {
        let mut ps = scalar_params(1.0);
        let mut st = OptState::new(&ps, 0.1);
        assert!(matches!(
            opt_step(&mut ps, &mut st),
            Err(DiffError::State(_))
        ));
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut ps = scalar_params(1.25);
        let mut st = OptState::new(&ps, 0.1);
        // Populate explicitly-zero grads via a loss that ignores w's sign:
        // loss = relu(-w^2) has zero gradient at w != 0.
        let mut tape = Tape::new();
        let w = tape.param(&ps, "w").unwrap();
        let sq = tape.square(w);
        let neg = tape.neg(sq);
        let r = tape.relu(neg);
        let loss = tape.sum_all(r);
        tape.backward_into(loss, &mut ps).unwrap();
        assert_eq!(ps.grad("w").unwrap().item(), 0.0);
        opt_step(&mut ps, &mut st).unwrap();
        assert_eq!(ps.value("w").unwrap().item(), 1.25);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn update_descends_against_gradient_sign() {
        let mut ps = scalar_params(1.0);
        let mut st = OptState::new(&ps, 0.1);
        let mut tape = Tape::new();
        let w = tape.param(&ps, "w").unwrap();
        let loss = tape.sum_all(w); // d loss / d w = 1
        tape.backward_into(loss, &mut ps).unwrap();
        opt_step(&mut ps, &mut st).unwrap();
        assert!(ps.value("w").unwrap().item() < 1.0);
    }

    #[test]
    fn ten_steps_shrink_distance_to_quadratic_minimum() {
        let mut ps = scalar_params(0.0);
        let mut st = OptState::new(&ps, 0.1);
        let f = |w: f64| (w - 3.0) * (w - 3.0);
        let start_gap = (0.0f64 - 3.0).abs();
        for _ in 0..10 {
            let mut tape = Tape::new();
            let w = tape.param(&ps, "w").unwrap();
            let shifted = tape.add_const(w, -3.0);
            let sq = tape.square(shifted);
            let loss = tape.sum_all(sq);
            tape.backward_into(loss, &mut ps).unwrap();
            opt_step(&mut ps, &mut st).unwrap();
        }
        let w = ps.value("w").unwrap().item();
        assert!((w - 3.0).abs() < start_gap);
        assert!(f(w) < f(0.0));
    }

    #[test]
    fn zero_learning_rate_is_bit_identical() {
        let mut rng = crate::rng::Rng::new(3);
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::randn(vec![8], 1.0, &mut rng)).unwrap();
        let before = ps.value("w").unwrap().data().to_vec();
        let mut st = OptState::new(&ps, 0.0);
        let mut tape = Tape::new();
        let w = tape.param(&ps, "w").unwrap();
        let sq = tape.square(w);
        let loss = tape.sum_all(sq);
        tape.backward_into(loss, &mut ps).unwrap();
        opt_step(&mut ps, &mut st).unwrap();
        let after = ps.value("w").unwrap().data();
        assert!(before
            .iter()
            .zip(after)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn gradients_zeroed_after_step() {
        let mut ps = scalar_params(2.0);
        let mut st = OptState::new(&ps, 0.1);
        let mut tape = Tape::new();
        let w = tape.param(&ps, "w").unwrap();
        let sq = tape.square(w);
        let loss = tape.sum_all(sq);
        tape.backward_into(loss, &mut ps).unwrap();
        opt_step(&mut ps, &mut st).unwrap();
        assert_eq!(ps.grad("w").unwrap().item(), 0.0);
        assert!(!ps.grads_populated());
    }
}
