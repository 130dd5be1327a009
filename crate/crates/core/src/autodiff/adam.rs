use crate::scalar::Scalar;

use super::params::{GradBuffer, ParamStore};
use super::tensor::Tensor;

/// Adam hyperparameters. The learning rate used at epoch `e` is
/// `learning_rate * decay^e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            decay: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state: first and second moments per parameter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect::<Vec<_>>()
        };
        Adam {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.config.learning_rate * self.config.decay.powi(epoch as i32)
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &GradBuffer<T>, epoch: usize) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr = T::of(self.learning_rate_at(epoch));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bias1 = T::one() - T::of(c.beta1.powi(t));
        let bias2 = T::one() - T::of(c.beta2.powi(t));
        let eps = T::of(c.epsilon);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = self.first[id.index()].data_mut();
            let v = self.second[id.index()].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut GradBuffer<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().as_f64();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    fn quad_step(store: &mut ParamStore<f64>, adam: &mut Adam<f64>, target: f64) {
        let x = store.find("x").unwrap();
        let mut buf = GradBuffer::zeros_like(store);
        {
            let mut g = Graph::with_params(store);
            let xn = g.param(x);
            let c = g.constant(Tensor::scalar(target));
            let d = g.sub(xn, c).unwrap();
            let l = g.mul(d, d).unwrap();
            g.backward_into(l, &mut buf).unwrap();
        }
        adam.step(store, &buf, 0);
    }

    fn no_decay(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            decay: 1.0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row(vec![1.5, -2.0]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let buf = GradBuffer::zeros_like(&store);
        adam.step(&mut store, &buf, 0);
        assert_eq!(store.get(id).data(), &[1.5, -2.0]);
    }

    #[test]
    fn one_step_descends() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(1.0));
        let mut adam = Adam::new(no_decay(0.1), &store);
        quad_step(&mut store, &mut adam, 0.0);
        assert!(store.get(x).item() < 1.0);
    }

    #[test]
    fn converges_to_quadratic_minimum() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(0.0));
        let mut adam = Adam::new(no_decay(0.05), &store);
        for _ in 0..500 {
            quad_step(&mut store, &mut adam, 3.0);
        }
        let v = store.get(x).item();
        assert!((v - 3.0).abs() < 1e-2, "x = {v}");
    }

    #[test]
    fn learning_rate_decays_per_epoch() {
        let store: ParamStore<f64> = ParamStore::new();
        let adam = Adam::new(AdamConfig::default(), &store);
        assert_eq!(adam.learning_rate_at(0), 0.001);
        assert!((adam.learning_rate_at(2) - 0.001 * 0.81).abs() < 1e-18);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row(vec![0.0, 0.0]));
        let mut buf = GradBuffer::zeros_like(&store);
        buf.get_mut(id).data_mut().copy_from_slice(&[3.0, 4.0]);
        let before = clip_global_norm(&mut buf, 1.0);
        assert_eq!(before, 5.0);
        assert!((buf.global_norm() - 1.0_f64).abs() < 1e-12);
    }
}
