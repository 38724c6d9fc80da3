//! Adam with bias correction, and weight clipping for clipped critics.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    /// `beta1 = 0.5`, `beta2 = 0.999`: the setting used for every network here.
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers for one ordered list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        let zeros = |t: &&Tensor<T>| Tensor::zeros(t.rows(), t.cols());
        Self {
            config,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// One bias-corrected update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment buffers",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::Numeric {
                    primitive: "adam_step",
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
        let c1 = 1.0 - libm::pow(beta1, t as f64);
        let c2 = 1.0 - libm::pow(beta2, t as f64);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gi = gi.as_f64();
                let m_new = beta1 * mi.as_f64() + (1.0 - beta1) * gi;
                let v_new = beta2 * vi.as_f64() + (1.0 - beta2) * gi * gi;
                *mi = T::from_f64(m_new);
                *vi = T::from_f64(v_new);
                let m_hat = m_new / c1;
                let v_hat = v_new / c2;
                let update = learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
                *w = T::from_f64(w.as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Clamps every entry of `params` into `[-bound, bound]`.
pub fn clip_weights<T: Real>(params: &mut [&mut Tensor<T>], bound: f64) -> Result<()> {
    if !(bound > 0.0) {
        return Err(Error::Config(format!("clip bound must be positive, got {bound}")));
    }
    let hi = T::from_f64(bound);
    let lo = -hi;
    for p in params.iter_mut() {
        for w in p.data_mut() {
            if *w > hi {
                *w = hi;
            } else if *w < lo {
                *w = lo;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn one(v: f64) -> Tensor<f64> {
        Tensor::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = Tensor::<f64>::new(1, 2, vec![1.0, -2.0]).unwrap();
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &[&p]);
        adam.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);

        adam.step(&mut [&mut p], &[Tensor::new(1, 2, vec![1.0, 1.0]).unwrap()])
            .unwrap();
        let mut last = (adam.first_moments()[0].max_abs(), adam.second_moments()[0].max_abs());
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).unwrap();
            let now = (adam.first_moments()[0].max_abs(), adam.second_moments()[0].max_abs());
            assert!(now.0 < last.0 && now.1 < last.1);
            last = now;
        }
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.01, 250.0] {
            let mut p = one(0.0);
            let mut adam = AdamState::new(AdamConfig::with_lr(1e-3), &[&p]);
            adam.step(&mut [&mut p], &[one(g)]).unwrap();
            let expected = -1e-3 * g.signum();
            assert!((p.data()[0] - expected).abs() < 1e-8, "g={g}: {}", p.data()[0]);
            assert_eq!(adam.step_count(), 1);
        }
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        let mut p = one(0.0);
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-2), &[&p]);
        let mut prev = 0.0;
        for _ in 0..2000 {
            adam.step(&mut [&mut p], &[one(-0.7)]).unwrap();
            let delta = p.data()[0] - prev;
            prev = p.data()[0];
            assert!(delta > 0.0);
            assert!((delta - 1e-2).abs() < 1e-5);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = one(1.0);
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-2), &[&p]);
        let err = adam.step(&mut [&mut p], &[one(f64::NAN)]).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
        assert_eq!(p.data(), &[1.0]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn clipping_examples() {
        let mut w = Tensor::<f32>::new(1, 3, vec![-2.0, 0.005, 2.0]).unwrap();
        clip_weights(&mut [&mut w], 0.01).unwrap();
        assert_eq!(w.data(), &[-0.01, 0.005, 0.01]);
        let once = w.clone();
        clip_weights(&mut [&mut w], 0.01).unwrap();
        assert_eq!(w, once);
        assert!(matches!(
            clip_weights(&mut [&mut w], 0.0),
            Err(Error::Config(_))
        ));
    }
}
