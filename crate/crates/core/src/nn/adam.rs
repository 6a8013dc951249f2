//! Adam with bias correction and optional global gradient-norm clipping.

use super::ParamStore;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: Option<f64>,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: Some(1.0),
            t: 0,
            m: store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
            v: store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// Apply one update from the accumulated gradients, then zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        if let Some(max) = self.grad_clip {
            store.clip_grad_norm(max);
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g: Vec<f64> = store.grad(id).data.clone();
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let p = &mut store.value_mut(id).data;
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store);
        assert_eq!(store.value(id).data, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // Bias-corrected m/√v reduces to sign(g) on the first step.
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap());
        store.grad_mut(id).data = vec![0.3, -0.7];
        let mut adam = Adam::new(&store, 0.1);
        adam.grad_clip = None;
        adam.step(&mut store);
        let p = &store.value(id).data;
        assert!((p[0] + 0.1).abs() < 1e-6, "{p:?}");
        assert!((p[1] - 0.1).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn converges_on_quadratic() {
        // 100 steps on f(w) = w² from w₀ = 1 with lr 0.1.
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[1], vec![1.0]).unwrap());
        let mut adam = Adam::new(&store, 0.1);
        adam.grad_clip = None;
        for _ in 0..100 {
            let w = store.value(id).data[0];
            store.grad_mut(id).data[0] = 2.0 * w;
            adam.step(&mut store);
        }
        let w = store.value(id).data[0];
        assert!(w.abs() < 0.1, "w after 100 steps: {w}");
    }
}
