use alloc::vec::Vec;


#[allow(unused_imports)]
use num_traits::Float;
use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW) decay factor.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam moments for every parameter of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One AdamW update of every parameter from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Config("optimizer state belongs to a different parameter set".into()));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let bias1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bias2 = T::from_f64(1.0 - c.beta2.powi(t));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);
        let decay = T::from_f64(c.lr * c.weight_decay);
        let one = T::one();
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.as_ref().expect("checked above");
            let it = p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gi), (mi, vi)) in it {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w = *w - decay * *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", Tensor::scalar(v)).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        s.zero_grad();
        let id = s.id("p").unwrap();
        s.get_mut(id).grad = Some(Tensor::scalar(g));
    }

    /// Plain scalar Adam recurrence, written independently of the tensor path.
    fn reference(p0: f64, grads: &[f64], c: AdamConfig) -> f64 {
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            p -= c.lr * c.weight_decay * p;
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let mh = m / (1.0 - c.beta1.powi(t));
            let vh = v / (1.0 - c.beta2.powi(t));
            p -= c.lr * mh / (vh.sqrt() + c.eps);
        }
        p
    }

    #[test]
    fn zero_gradient_leaves_param() {
        let mut s = scalar_store(0.7);
        let mut opt = AdamState::new(AdamConfig::default(), &s);
        set_grad(&mut s, 0.0);
        opt.step(&mut s).unwrap();
        assert_eq!(s.value(s.id("p").unwrap()).item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut opt = AdamState::new(cfg, &s);
        set_grad(&mut s, 1.0);
        opt.step(&mut s).unwrap();
        let p = s.value(s.id("p").unwrap()).item();
        assert!((p - 0.9).abs() < 1e-6, "{p}");
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn two_steps_match_reference() {
        let cfg = AdamConfig { lr: 0.05, weight_decay: 0.001, ..AdamConfig::default() };
        let mut s = scalar_store(1.3);
        let mut opt = AdamState::new(cfg, &s);
        let grads = [0.8, -0.3];
        for &g in &grads {
            set_grad(&mut s, g);
            opt.step(&mut s).unwrap();
        }
        let p = s.value(s.id("p").unwrap()).item();
        assert!((p - reference(1.3, &grads, cfg)).abs() < 1e-10);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut s = scalar_store(1.0);
        let mut opt = AdamState::new(AdamConfig::default(), &s);
        assert!(matches!(opt.step(&mut s), Err(Error::MissingGrad(_))));
    }
}
