use crate::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Moment accumulators for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

/// Adam with bias correction and an L2 term folded into the gradient.
///
/// The learning rate is public so callers can decay it between epochs.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        let states = params
            .iter()
            .map(|p| AdamState {
                first_moment: vec![0.0; p.numel()],
                second_moment: vec![0.0; p.numel()],
            })
            .collect();
        Self {
            config,
            step: 0,
            states,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// One update. `grads[i]` is the data gradient of `params[i]`; the decay
    /// term `l2_lambda * w` is added before the moments are updated.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]], l2_lambda: f64) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != params.len() {
            return Err(TensorError::Config(format!(
                "adam tracks {} tensors but got {} params and {} grads",
                self.states.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), s) in params.iter().zip(grads).zip(&self.states) {
            if p.numel() != g.len() || s.first_moment.len() != g.len() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.states) {
            let w = p.data_mut();
            for i in 0..w.len() {
                let gi = g[i] + l2_lambda * w[i];
                s.first_moment[i] = beta1 * s.first_moment[i] + (1.0 - beta1) * gi;
                s.second_moment[i] = beta2 * s.second_moment[i] + (1.0 - beta2) * gi * gi;
                let m_hat = s.first_moment[i] / c1;
                let v_hat = s.second_moment[i] / c2;
                w[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut w = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let before = w.clone();
        let mut adam = Adam::new(AdamConfig::default(), &[&w]);
        for _ in 0..5 {
            adam.step(&mut [&mut w], &[&[0.0; 3]], 0.0).unwrap();
        }
        assert_eq!(w, before);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g and v_hat = g², so the step is lr * g / (|g| + eps).
        for g in [1e-3, 0.3, 250.0] {
            let mut w = Tensor::scalar(1.0);
            let cfg = AdamConfig {
                learning_rate: 0.01,
                ..AdamConfig::default()
            };
            let mut adam = Adam::new(cfg, &[&w]);
            adam.step(&mut [&mut w], &[&[g]], 0.0).unwrap();
            let moved = 1.0 - w.item();
            let expected = 0.01 * g / (g + 1e-7);
            assert!((moved - expected).abs() < 1e-15, "g={g}: {moved}");
            assert!((moved - 0.01).abs() < 1e-5 * 0.01 / g.min(1.0));
        }
    }

    #[test]
    fn l2_shrinks_magnitude() {
        let mut w = Tensor::new(vec![2], vec![3.0, -3.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &[&w]);
        for _ in 0..10 {
            adam.step(&mut [&mut w], &[&[0.0, 0.0]], 0.1).unwrap();
        }
        assert!(w.data()[0] < 3.0 && w.data()[0] > 0.0);
        assert!(w.data()[1] > -3.0 && w.data()[1] < 0.0);
    }

    #[test]
    fn misaligned_grads_rejected() {
        let mut w = Tensor::zeros(&[2]);
        let mut adam = Adam::new(AdamConfig::default(), &[&w]);
        assert!(adam.step(&mut [&mut w], &[&[0.0]], 0.0).is_err());
        assert_eq!(adam.step_count(), 0);
    }
}
