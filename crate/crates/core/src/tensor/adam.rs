use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<(), TensorError> {
        if grads.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: (params.len(), 0),
                rhs: (grads.len(), 0),
            });
        }
        for ((p, g), m) in params.tensors().iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || m.shape() != p.shape() {
                return Err(TensorError::ShapeMismatch { op: "adam_step", lhs: p.shape(), rhs: g.shape() });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::from_vec(1, 3, vec![0.3, -1.0, 2.0]).unwrap());
        let before = store.clone();
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let zeros = store.zeros_like();
        for _ in 0..10 {
            adam.step(&mut store, &zeros).unwrap();
        }
        assert_eq!(store, before);
        assert_eq!(adam.step_count(), 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(1.0));
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store, &[Tensor::scalar(1.0)]).unwrap();
        let moved = 1.0 - store.tensors()[0].item();
        assert!((moved - 5e-4).abs() < 1e-10, "{moved}");
    }

    fn run_parabola(lr: f64, steps: usize) -> f64 {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(1.0));
        let mut adam = AdamState::new(&store, AdamConfig { lr, ..AdamConfig::default() });
        for _ in 0..steps {
            let mut tape = Tape::new(0);
            let x = tape.param(&store, id);
            let y = tape.matmul(x, x).unwrap();
            let g = tape.backward(y).unwrap().param_grads(&store);
            adam.step(&mut store, &g).unwrap();
        }
        store.get(id).item()
    }

    #[test]
    fn descends_a_parabola() {
        // While the gradient keeps its sign and shrinks, each step moves x by
        // at most about lr, so 500 steps cover a little under 0.25.
        let x = run_parabola(5e-4, 500);
        assert!((0.75..0.8).contains(&x), "{x}");
        let x = run_parabola(5e-3, 500);
        assert!(x.abs() < 0.5, "{x}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::zeros(2, 2));
        let mut adam = AdamState::new(&store, AdamConfig::default());
        assert!(adam.step(&mut store, &[Tensor::zeros(1, 2)]).is_err());
        assert!(adam.step(&mut store, &[]).is_err());
    }
}
