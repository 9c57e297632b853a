//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use crate::{Error, ParamStore, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Moment buffers and step counter for every parameter in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update of every parameter in `params`.
    ///
    /// `θ ← θ − lr·wd·θ − lr·m̂ / (√v̂ + ε)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (name, value) in params.iter() {
            match grads.get(name) {
                None => return Err(Error::Contract(format!("missing gradient for `{}`", name))),
                Some(g) if g.len() != value.len() => {
                    return Err(Error::Dimension {
                        op: "adamw",
                        detail: format!("`{}`: gradient {} vs parameter {}", name, g.len(), value.len()),
                    })
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, value) in params.iter_mut() {
            let g = &grads[name];
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (i, theta) in value.data_mut().iter_mut().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *theta -= lr * weight_decay * *theta;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn store(values: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(values.to_vec()));
        p
    }

    fn grads(values: &[f64]) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("w".to_string(), values.to_vec())])
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = store(&[1.0, -2.0]);
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() });
        opt.step(&mut p, &grads(&[0.0, 0.0])).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_with_decay_scales_parameters() {
        let mut p = store(&[1.0, -2.0]);
        let (lr, wd) = (0.1, 0.01);
        let mut opt = AdamW::new(AdamWConfig { lr, weight_decay: wd, ..Default::default() });
        opt.step(&mut p, &grads(&[0.0, 0.0])).unwrap();
        let f = 1.0 - lr * wd;
        assert_eq!(p.get("w").unwrap().data(), &[1.0 * f, -2.0 * f]);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        // m̂ = g and v̂ = g² on the first step, so the update is lr·g/(|g|+ε).
        let mut p = store(&[0.5, 0.5, 0.5]);
        let lr = 0.01;
        let mut opt = AdamW::new(AdamWConfig { lr, weight_decay: 0.0, ..Default::default() });
        opt.step(&mut p, &grads(&[3.0, -0.2, 1e-3])).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - (0.5 - lr)).abs() < 1e-9);
        assert!((w[1] - (0.5 + lr)).abs() < 1e-9);
        assert!((w[2] - (0.5 - lr)).abs() < 1e-7);
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut p = store(&[1.0]);
        let mut opt = AdamW::new(AdamWConfig::default());
        assert!(matches!(opt.step(&mut p, &BTreeMap::new()), Err(Error::Contract(_))));
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn identical_inputs_give_bit_identical_updates() {
        let run = || {
            let mut p = store(&[0.3, -0.7, 1.1]);
            let mut opt = AdamW::new(AdamWConfig { lr: 0.05, ..Default::default() });
            for s in 0..5 {
                let g = [0.1 * s as f64, -0.3, 0.7 / (s + 1) as f64];
                opt.step(&mut p, &grads(&g)).unwrap();
            }
            p.get("w").unwrap().data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
