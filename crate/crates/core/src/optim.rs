use crate::error::{Error, Result};
use crate::network::{QNetwork, Real};
use crate::types::OptimizerKind;

/// Adaptive-moment (or plain gradient descent) state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F = f32> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub step_count: u64,
    pub first_moment: QNetwork<F>,
    pub second_moment: QNetwork<F>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, adam_epsilon: f64, net: &QNetwork<F>) -> Self {
        OptimizerState {
            kind,
            learning_rate,
            adam_epsilon,
            beta1: 0.9,
            beta2: 0.999,
            step_count: 0,
            first_moment: net.zeros_like(),
            second_moment: net.zeros_like(),
        }
    }

    pub fn sgd(learning_rate: f64, net: &QNetwork<F>) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate, 1e-8, net)
    }

    /// Applies one descent step. Non-finite gradients leave `params` untouched.
    pub fn apply(&mut self, params: &mut QNetwork<F>, grads: &QNetwork<F>) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.first_moment) {
            return Err(Error::contract("optimizer, parameters and gradients differ in shape"));
        }
        if grads.tensors().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step: self.step_count,
                message: "non-finite gradient".into(),
            });
        }
        self.step_count += 1;
        let lr = F::of(self.learning_rate);
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().zip(grads.tensors()) {
                    for (p, &g) in p.iter_mut().zip(g) {
                        *p = *p - lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
                let t = self.step_count as i32;
                let bias1 = F::of(1.0 - self.beta1.powi(t));
                let bias2 = F::of(1.0 - self.beta2.powi(t));
                let eps = F::of(self.adam_epsilon);
                let one = F::one();
                let tensors = params
                    .tensors_mut()
                    .zip(grads.tensors())
                    .zip(self.first_moment.tensors_mut().zip(self.second_moment.tensors_mut()));
                for ((p, g), (m, v)) in tensors {
                    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let m_hat = *m / bias1;
                        let v_hat = *v / bias2;
                        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;

    fn net() -> QNetwork<f64> {
        QNetwork::new(
            &Architecture {
                input_dim: 2,
                hidden: vec![3],
                action_count: 2,
                dueling: false,
            },
            5,
        )
    }

    #[test]
    fn sgd_step_is_exact() {
        let mut p = net();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.tensors_mut().for_each(|t| t.fill(2.0));
        OptimizerState::sgd(0.25, &p).apply(&mut p, &g).unwrap();
        for (a, b) in p.tensors().flatten().zip(before.tensors().flatten()) {
            assert!((a - (b - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut p = net();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.tensors_mut().for_each(|t| t.fill(-3.0));
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01, 1e-12, &p);
        opt.apply(&mut p, &g).unwrap();
        for (a, b) in p.tensors().flatten().zip(before.tensors().flatten()) {
            assert!((a - b - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = net();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.tensors_mut().next().unwrap()[0] = f64::INFINITY;
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01, 1e-8, &p);
        assert!(matches!(opt.apply(&mut p, &g), Err(Error::Divergence { step: 0, .. })));
        assert_eq!(p, before);
    }
}
