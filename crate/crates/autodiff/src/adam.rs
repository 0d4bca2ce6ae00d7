//! Adam with L2 weight decay folded into the gradient before the moment
//! updates.

use indexmap::IndexMap;
use ndarray::Array2;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    step: u64,
    m: IndexMap<String, Array2<f64>>,
    v: IndexMap<String, Array2<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &ParamStore) -> Self {
        let mut m = IndexMap::with_capacity(params.len());
        let mut v = IndexMap::with_capacity(params.len());
        for (name, value) in params.iter() {
            m.insert(name.clone(), Array2::zeros(value.dim()));
            v.insert(name.clone(), Array2::zeros(value.dim()));
        }
        AdamState { cfg, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from the given gradients. Parameters absent from
    /// `grads` are an error: gradients must be populated first.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &IndexMap<String, Array2<f64>>,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let g = grads
                .get(&name)
                .ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            let p = params.get_mut(&name)?;
            let m = self.m.get_mut(&name).expect("moment registered");
            let v = self.v.get_mut(&name).expect("moment registered");
            let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
            let (lr, eps, wd) = (self.cfg.lr, self.cfg.eps, self.cfg.weight_decay);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g + wd * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store_with(name: &str, value: Array2<f64>) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.insert(name, value).unwrap();
        ps
    }

    #[test]
    fn zero_grads_zero_decay_leave_params_unchanged() {
        let mut ps = store_with("w", array![[1.0, -2.0], [3.0, 4.0]]);
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.0), &ps);
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), Array2::zeros((2, 2)));
        adam.step(&mut ps, &grads).unwrap();
        assert_eq!(ps.get("w").unwrap(), &array![[1.0, -2.0], [3.0, 4.0]]);
    }

    #[test]
    fn quadratic_converges_to_minimum() {
        // loss = (x - 3)^2, grad = 2(x - 3)
        let mut ps = store_with("x", array![[0.0]]);
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.0), &ps);
        for _ in 0..500 {
            let x = ps.get("x").unwrap()[(0, 0)];
            let mut grads = IndexMap::new();
            grads.insert("x".to_string(), array![[2.0 * (x - 3.0)]]);
            adam.step(&mut ps, &grads).unwrap();
        }
        assert!((ps.get("x").unwrap()[(0, 0)] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn weight_decay_alone_shrinks_parameter_norm() {
        let mut ps = store_with("w", array![[2.0, -2.0]]);
        let mut adam = AdamState::new(AdamConfig::new(0.01, 5e-4), &ps);
        let norm0: f64 = ps.get("w").unwrap().iter().map(|v| v * v).sum();
        for _ in 0..10 {
            let mut grads = IndexMap::new();
            grads.insert("w".to_string(), Array2::zeros((1, 2)));
            adam.step(&mut ps, &grads).unwrap();
        }
        let norm1: f64 = ps.get("w").unwrap().iter().map(|v| v * v).sum();
        assert!(norm1 < norm0);
    }

    #[test]
    fn step_counter_increments() {
        let mut ps = store_with("x", array![[1.0]]);
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.0), &ps);
        let mut grads = IndexMap::new();
        grads.insert("x".to_string(), array![[0.5]]);
        adam.step(&mut ps, &grads).unwrap();
        adam.step(&mut ps, &grads).unwrap();
        assert_eq!(adam.step_count(), 2);
    }
}
