use serde::{Deserialize, Serialize};

use crate::autograd::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay.
///
/// `v ← μ·v + (g + λ·w)`, `w ← w − η·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    config: SgdConfig,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sgd {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// Applies one update to every trainable parameter and clears the gradients.
    pub fn step(&mut self, params: &mut [Tensor<T>]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.requires_grad() && p.grad().is_none()) {
            return Err(Error::Usage(format!("parameter {i} has no gradient")));
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        let lr = T::from_f64_lossy(self.config.learning_rate);
        let mu = T::from_f64_lossy(self.config.momentum);
        let wd = T::from_f64_lossy(self.config.weight_decay);
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            if !p.requires_grad() {
                continue;
            }
            let (w, g) = p.value_and_grad_mut();
            let g = g.expect("checked above");
            for ((w, &g), v) in w.iter_mut().zip(g).zip(vel.iter_mut()) {
                *v = mu * *v + g + wd * *w;
                *w -= lr * *v;
            }
            p.clear_grad();
        }
        Ok(())
    }
}

/// One momentum-free step on a standalone parameter list.
pub fn sgd_step<T: Scalar>(params: &mut [Tensor<T>], config: &SgdConfig) -> Result<()> {
    Sgd::new(*config)?.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(w: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::from_f64(vec![1], &[w]).unwrap().with_requires_grad(true);
        t.accumulate_grad(&[g]);
        t
    }

    #[test]
    fn plain_step() {
        let mut p = [param(1.0, 0.5)];
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        sgd_step(&mut p, &cfg).unwrap();
        assert!((p[0].data()[0] - 0.95).abs() < 1e-15);
        assert!(p[0].grad().is_none());
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = [param(0.3, 0.0), param(-2.0, 0.0)];
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.5,
            weight_decay: 0.0,
        };
        sgd_step(&mut p, &cfg).unwrap();
        assert_eq!(p[0].data()[0], 0.3);
        assert_eq!(p[1].data()[0], -2.0);
    }

    #[test]
    fn momentum_unrolls() {
        let g = 0.7;
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut opt = Sgd::new(cfg).unwrap();
        let mut p = [param(0.0, g)];
        opt.step(&mut p).unwrap();
        let after_one = p[0].data()[0];
        assert!((after_one + 0.1 * g).abs() < 1e-12);
        p[0].accumulate_grad(&[g]);
        opt.step(&mut p).unwrap();
        let second = after_one - p[0].data()[0];
        assert!((second - 0.19 * g).abs() < 1e-12);
    }

    #[test]
    fn missing_grad_is_usage_error() {
        let mut p = [Tensor::<f32>::zeros(vec![2]).with_requires_grad(true)];
        assert!(matches!(sgd_step(&mut p, &SgdConfig::default()), Err(Error::Usage(_))));
    }

    #[test]
    fn rejects_bad_config() {
        let bad = SgdConfig {
            learning_rate: 0.0,
            ..SgdConfig::default()
        };
        assert!(Sgd::<f32>::new(bad).is_err());
        let bad = SgdConfig {
            momentum: 1.0,
            ..SgdConfig::default()
        };
        assert!(Sgd::<f32>::new(bad).is_err());
    }
}
