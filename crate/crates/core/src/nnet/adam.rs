use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Decoupled decay: `value -= lr * weight_decay * value` before the Adam step.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 6.25e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("weight_decay", self.weight_decay)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of every parameter using its accumulated
/// gradient. `step` counts from 1. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(store: &mut ParamStore, config: &OptimizerConfig, step: u64) -> Result<()> {
    assert!(step >= 1, "adam steps count from 1");
    if let Some(bad) = store.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFiniteGradient(bad.name.clone()));
    }
    let OptimizerConfig {
        learning_rate: lr,
        weight_decay,
        beta1,
        beta2,
        epsilon,
    } = *config;
    let correction1 = 1.0 - beta1.powi(step as i32);
    let correction2 = 1.0 - beta2.powi(step as i32);
    for p in store.iter_mut() {
        let grad = p.grad.data();
        let m = p.first_moment.data_mut();
        for (m, g) in m.iter_mut().zip(grad) {
            *m = beta1 * *m + (1.0 - beta1) * g;
        }
        let v = p.second_moment.data_mut();
        for (v, g) in v.iter_mut().zip(grad) {
            *v = beta2 * *v + (1.0 - beta2) * g * g;
        }
        let (m, v) = (p.first_moment.data(), p.second_moment.data());
        for (i, x) in p.value.data_mut().iter_mut().enumerate() {
            *x -= lr * weight_decay * *x;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            *x -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Graph, Tensor};

    fn single(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::vector(values));
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = single(vec![0.5, -2.0]);
        s.iter_mut().for_each(|p| p.grad.fill(1.0));
        let cfg = OptimizerConfig {
            learning_rate: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut s, &cfg, 1).unwrap();
        let expected = 0.01 / (1.0 + 1e-8);
        let x = s.iter().next().unwrap().value.data().to_vec();
        assert!((x[0] - (0.5 - expected)).abs() < 1e-15);
        assert!((x[1] - (-2.0 - expected)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut s = single(vec![0.5, -2.0, 3.25]);
        let before = s.clone();
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for t in 1..=5 {
            adam_step(&mut s, &cfg, t).unwrap();
        }
        assert_eq!(
            s.iter().next().unwrap().value,
            before.iter().next().unwrap().value
        );
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = single(vec![1.0]);
        s.iter_mut().for_each(|p| p.grad.fill(f64::NAN));
        let err = adam_step(&mut s, &OptimizerConfig::default(), 1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "x"));
    }

    /// Plain scalar Adam written out independently of the tensor code.
    fn scalar_adam(x0: [f64; 2], lr: f64, steps: u64) -> [f64; 2] {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut x = x0;
        let mut m = [0.0; 2];
        let mut v = [0.0; 2];
        for t in 1..=steps {
            for i in 0..2 {
                let g = 2.0 * x[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / (1.0 - b1.powi(t as i32));
                let vh = v[i] / (1.0 - b2.powi(t as i32));
                x[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        x
    }

    #[test]
    fn quadratic_bowl_converges_like_scalar_reference() {
        let reference = scalar_adam([5.0, -5.0], 0.1, 200);
        let ref_norm = (reference[0].powi(2) + reference[1].powi(2)).sqrt();
        assert!(ref_norm < 0.5, "reference norm {ref_norm}");

        let mut s = single(vec![5.0, -5.0]);
        let id = s.ids().next().unwrap();
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        for t in 1..=200 {
            s.zero_grad();
            let grads = {
                let mut g = Graph::new(&s);
                let x = g.param(id);
                let sq = g.mul(x, x).unwrap();
                let loss = g.sum(sq);
                g.backward(loss).unwrap()
            };
            s.accumulate(&grads);
            adam_step(&mut s, &cfg, t).unwrap();
        }
        let x = s.value(id).data();
        assert!((x[0] - reference[0]).abs() < 1e-12);
        assert!((x[1] - reference[1]).abs() < 1e-12);
        assert!((x[0].powi(2) + x[1].powi(2)).sqrt() < 0.5);
    }
}
