//! The stochastic mapper `M`: visual feature -> diagonal Gaussian over the
//! redundancy-free space.
//!
//! Architecture: `affine(d_x -> h)`, ReLU, then two affine heads `h -> d_z`
//! for the mean and the log-variance. The log-variance is clamped to
//! `[-LOG_VAR_LIMIT, LOG_VAR_LIMIT]`. The variational marginal `r(z)` is the
//! standard normal, which makes the KL term closed-form:
//!
//! ```text
//! KL(N(mu, diag σ²) || N(0, I)) = ½ Σ_j (mu_j² + σ_j² − 1 − log σ_j²)
//! ```

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{Linear, LinearVars, Parameters};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

pub const LOG_VAR_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MapperParams<T = f32> {
    pub hidden: Linear<T>,
    pub mu_head: Linear<T>,
    pub log_var_head: Linear<T>,
}

/// Diagonal Gaussian `p_M(z|x)` for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior<T = f32> {
    pub mu: Tensor<T>,
    pub log_var: Tensor<T>,
}

/// Mapper layers placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundMapper {
    pub hidden: LinearVars,
    pub mu_head: LinearVars,
    pub log_var_head: LinearVars,
}

/// Posterior nodes on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorVars {
    pub mu: Var,
    pub log_var: Var,
}

impl<T: Real> MapperParams<T> {
    pub fn init(d_x: usize, hidden: usize, d_z: usize, rng: &mut crate::Rng) -> Self {
        let hidden_layer = Linear::init(d_x, hidden, rng);
        let mut mu_head = Linear::init(hidden, d_z, rng);
        let mut log_var_head = Linear::init(hidden, d_z, rng);
        // start close to the marginal N(0, I)
        for head in [&mut mu_head, &mut log_var_head] {
            head.weight
                .data_mut()
                .iter_mut()
                .for_each(|w| *w = *w * T::from_f64(0.1));
        }
        Self {
            hidden: hidden_layer,
            mu_head,
            log_var_head,
        }
    }

    pub fn zeros(d_x: usize, hidden: usize, d_z: usize) -> Self {
        Self {
            hidden: Linear::zeros(d_x, hidden),
            mu_head: Linear::zeros(hidden, d_z),
            log_var_head: Linear::zeros(hidden, d_z),
        }
    }

    /// Exact identity on the mean (`relu(x) − relu(−x) = x`) with the
    /// smallest admissible variance; `d_z = d_x`, `h = 2·d_x`.
    pub fn identity(d_x: usize) -> Self {
        let one = T::one();
        let hidden = Linear {
            weight: Tensor::from_fn(d_x, 2 * d_x, |r, c| {
                if c == r {
                    one
                } else if c == r + d_x {
                    -one
                } else {
                    T::zero()
                }
            }),
            bias: Tensor::zeros(1, 2 * d_x),
        };
        let mu_head = Linear {
            weight: Tensor::from_fn(2 * d_x, d_x, |r, c| {
                if r == c {
                    one
                } else if r == c + d_x {
                    -one
                } else {
                    T::zero()
                }
            }),
            bias: Tensor::zeros(1, d_x),
        };
        let log_var_head = Linear {
            weight: Tensor::zeros(2 * d_x, d_x),
            bias: Tensor::filled(1, d_x, T::from_f64(-LOG_VAR_LIMIT)),
        };
        Self {
            hidden,
            mu_head,
            log_var_head,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.fan_in()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.fan_out()
    }

    pub fn output_dim(&self) -> usize {
        self.mu_head.fan_out()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundMapper {
        BoundMapper {
            hidden: self.hidden.bind(tape, trainable),
            mu_head: self.mu_head.bind(tape, trainable),
            log_var_head: self.log_var_head.bind(tape, trainable),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(
                "map_posterior",
                format!("input has {} columns, mapper expects {}", x.cols(), self.input_dim()),
            ));
        }
        if !x.is_finite() {
            return Err(Error::Numeric {
                primitive: "map_posterior",
            });
        }
        Ok(())
    }

    fn hidden_activations(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        Ok(self.hidden.apply(x)?.map(|v| v.max(T::zero())))
    }
}

impl<T: Real> Parameters<T> for MapperParams<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = self.hidden.tensors();
        out.extend(self.mu_head.tensors());
        out.extend(self.log_var_head.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.hidden.tensors_mut();
        out.extend(self.mu_head.tensors_mut());
        out.extend(self.log_var_head.tensors_mut());
        out
    }
}

impl BoundMapper {
    /// Same order as [`Parameters::tensors`] on [`MapperParams`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = self.hidden.vars().to_vec();
        out.extend(self.mu_head.vars());
        out.extend(self.log_var_head.vars());
        out
    }

    pub fn posterior<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<PosteriorVars> {
        let h = self.hidden.forward(tape, x)?;
        let h = tape.relu(h)?;
        let mu = self.mu_head.forward(tape, h)?;
        let raw = self.log_var_head.forward(tape, h)?;
        let log_var = tape.clamp(raw, -LOG_VAR_LIMIT, LOG_VAR_LIMIT)?;
        Ok(PosteriorVars { mu, log_var })
    }
}

/// `z = mu + exp(log_var / 2) ⊙ eps` on the tape.
pub fn reparameterize<T: Real>(tape: &mut Tape<T>, post: PosteriorVars, eps: Var) -> Result<Var> {
    if tape.value(eps).shape() != tape.value(post.mu).shape() {
        return Err(Error::dim(
            "sample_reparam",
            format!(
                "noise {:?} for posterior {:?}",
                tape.value(eps).shape(),
                tape.value(post.mu).shape()
            ),
        ));
    }
    let half = tape.scale(post.log_var, 0.5)?;
    let std = tape.exp(half)?;
    let spread = tape.mul(std, eps)?;
    tape.add(post.mu, spread)
}

/// Batch mean of the closed-form KL to the standard normal, on the tape.
pub fn kl_term<T: Real>(tape: &mut Tape<T>, post: PosteriorVars) -> Result<Var> {
    let n = tape.value(post.mu).rows();
    if n == 0 {
        return Err(Error::dim("kl_to_marginal", "empty batch"));
    }
    let mu2 = tape.square(post.mu)?;
    let var = tape.exp(post.log_var)?;
    let s = tape.add(mu2, var)?;
    let s = tape.sub(s, post.log_var)?;
    let s = tape.add_scalar(s, -1.0)?;
    let total = tape.sum(s)?;
    tape.scale(total, 0.5 / n as f64)
}

impl<T: Real> GaussianPosterior<T> {
    /// Clamps `log_var` into the admissible range.
    pub fn new(mu: Tensor<T>, log_var: Tensor<T>) -> Result<Self> {
        if mu.shape() != log_var.shape() {
            return Err(Error::dim(
                "posterior",
                format!("mu {:?} vs log_var {:?}", mu.shape(), log_var.shape()),
            ));
        }
        let lim = T::from_f64(LOG_VAR_LIMIT);
        let log_var = log_var.map(|v| v.max(-lim).min(lim));
        Ok(Self { mu, log_var })
    }

    pub fn batch(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    /// Per-example KL to the standard normal.
    pub fn kl_per_example(&self) -> Vec<f64> {
        (0..self.batch())
            .map(|r| {
                self.mu
                    .row(r)
                    .iter()
                    .zip(self.log_var.row(r))
                    .map(|(m, lv)| {
                        let (m, lv) = (m.as_f64(), lv.as_f64());
                        0.5 * (m * m + libm::exp(lv) - 1.0 - lv)
                    })
                    .sum()
            })
            .collect()
    }
}

/// Runs the mapper forward without recording gradients.
pub fn map_posterior<T: Real>(params: &MapperParams<T>, x: &Tensor<T>) -> Result<GaussianPosterior<T>> {
    let h = params.hidden_activations(x)?;
    let mu = params.mu_head.apply(&h)?;
    let log_var = params.log_var_head.apply(&h)?;
    if !mu.is_finite() || !log_var.is_finite() {
        return Err(Error::Numeric {
            primitive: "map_posterior",
        });
    }
    GaussianPosterior::new(mu, log_var)
}

/// `z = mu + exp(log_var / 2) ⊙ eps` for externally supplied standard-normal `eps`.
pub fn sample_reparam<T: Real>(post: &GaussianPosterior<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    if eps.shape() != post.mu.shape() {
        return Err(Error::dim(
            "sample_reparam",
            format!("noise {:?} for posterior {:?}", eps.shape(), post.mu.shape()),
        ));
    }
    Ok(Tensor::from_fn(post.batch(), post.dim(), |r, c| {
        let std = (post.log_var.get(r, c) * T::from_f64(0.5)).exp_libm();
        post.mu.get(r, c) + std * eps.get(r, c)
    }))
}

/// Batch mean of `KL(p_M(z|x) || N(0, I))`; always `>= 0`.
pub fn kl_to_marginal<T: Real>(post: &GaussianPosterior<T>) -> f64 {
    let per = post.kl_per_example();
    if per.is_empty() {
        return 0.0;
    }
    per.iter().sum::<f64>() / per.len() as f64
}

/// Posterior mean, the deterministic feature used at inference time.
pub fn map_point<T: Real>(params: &MapperParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let h = params.hidden_activations(x)?;
    let mu = params.mu_head.apply(&h)?;
    if !mu.is_finite() {
        return Err(Error::Numeric {
            primitive: "map_point",
        });
    }
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn zero_params_give_standard_normal() {
        let m = MapperParams::<f32>::zeros(5, 4, 3);
        let x = Tensor::standard_normal(6, 5, &mut crate::rng_from_seed(0));
        let p = map_posterior(&m, &x).unwrap();
        assert_eq!(p.mu, Tensor::zeros(6, 3));
        assert_eq!(p.log_var, Tensor::zeros(6, 3));
        assert_eq!(kl_to_marginal(&p), 0.0);
    }

    #[test]
    fn duplicated_rows_map_identically() {
        let mut rng = crate::rng_from_seed(2);
        let m = MapperParams::<f32>::init(5, 8, 3, &mut rng);
        let x = Tensor::standard_normal(1, 5, &mut rng);
        let xx = x.concat_rows(&x).unwrap();
        let p = map_posterior(&m, &xx).unwrap();
        assert_eq!(p.mu.row(0), p.mu.row(1));
        assert_eq!(p.log_var.row(0), p.log_var.row(1));
    }

    #[test]
    fn clamp_bounds_hold_for_large_weights() {
        let mut rng = crate::rng_from_seed(4);
        let mut m = MapperParams::<f32>::init(5, 8, 3, &mut rng);
        m.log_var_head.weight = m.log_var_head.weight.map(|w| w * 100.0);
        let x = Tensor::standard_normal(20, 5, &mut rng).map(|v| v * 10.0);
        let p = map_posterior(&m, &x).unwrap();
        assert!(p.log_var.data().iter().all(|v| v.abs() <= 10.0));
        assert!(p.log_var.data().iter().any(|v| v.abs() == 10.0));
    }

    #[test]
    fn reparam_edge_cases() {
        let mut rng = crate::rng_from_seed(8);
        let mu = Tensor::<f64>::standard_normal(3, 2, &mut rng);
        let lv = Tensor::<f64>::standard_normal(3, 2, &mut rng);
        let p = GaussianPosterior::new(mu.clone(), lv).unwrap();
        assert_eq!(sample_reparam(&p, &Tensor::zeros(3, 2)).unwrap(), mu);

        let eps = Tensor::<f64>::standard_normal(3, 2, &mut rng);
        let unit = GaussianPosterior::new(Tensor::zeros(3, 2), Tensor::zeros(3, 2)).unwrap();
        assert_eq!(sample_reparam(&unit, &eps).unwrap(), eps);

        assert!(sample_reparam(&unit, &Tensor::zeros(2, 2)).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = GaussianPosterior::new(
            Tensor::<f64>::new(1, 1, vec![1.0]).unwrap(),
            Tensor::zeros(1, 1),
        )
        .unwrap();
        assert!((kl_to_marginal(&p) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tape_and_direct_paths_agree() {
        let mut rng = crate::rng_from_seed(9);
        let m = MapperParams::<f64>::init(6, 7, 4, &mut rng);
        let x = Tensor::standard_normal(5, 6, &mut rng);
        let eps = Tensor::standard_normal(5, 4, &mut rng);
        let direct = map_posterior(&m, &x).unwrap();

        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let post = bound.posterior(&mut tape, xv).unwrap();
        let ev = tape.constant(eps.clone());
        let z = reparameterize(&mut tape, post, ev).unwrap();
        let kl = kl_term(&mut tape, post).unwrap();

        assert_eq!(tape.value(post.mu), &direct.mu);
        let zd = sample_reparam(&direct, &eps).unwrap();
        for (a, b) in tape.value(z).data().iter().zip(zd.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((tape.scalar(kl).unwrap() - kl_to_marginal(&direct)).abs() < 1e-12);
    }

    #[test]
    fn map_point_is_the_mean_and_zero_variance_limit() {
        let mut rng = crate::rng_from_seed(10);
        let mut m = MapperParams::<f32>::init(4, 6, 3, &mut rng);
        let x = Tensor::standard_normal(7, 4, &mut rng);
        let post = map_posterior(&m, &x).unwrap();
        let z = map_point(&m, &x).unwrap();
        assert_eq!(z, post.mu);
        assert_eq!(map_point(&m, &x).unwrap(), z);

        // log_var pinned at the lower clamp: samples collapse onto the mean
        m.log_var_head = Linear {
            weight: Tensor::zeros(6, 3),
            bias: Tensor::filled(1, 3, -1e6),
        };
        let post = map_posterior(&m, &x).unwrap();
        let eps = Tensor::standard_normal(7, 3, &mut rng);
        let s = sample_reparam(&post, &eps).unwrap();
        for (a, b) in s.data().iter().zip(z.data()) {
            assert!((a - b).abs() <= 0.01 * (1.0 + b.abs()) * eps.max_abs() as f32);
        }
    }

    #[test]
    fn identity_mapper_is_exact() {
        let x = Tensor::<f32>::standard_normal(5, 4, &mut crate::rng_from_seed(1));
        let m = MapperParams::identity(4);
        assert_eq!(map_point(&m, &x).unwrap(), x);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let m = MapperParams::<f32>::zeros(2, 2, 2);
        let x = Tensor::new(1, 2, vec![f32::NAN, 0.0]).unwrap();
        assert!(matches!(map_posterior(&m, &x), Err(Error::Numeric { .. })));
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(mu in proptest::collection::vec(-5.0f64..5.0, 6),
                             lv in proptest::collection::vec(-12.0f64..12.0, 6)) {
            let p = GaussianPosterior::new(
                Tensor::new(2, 3, mu).unwrap(),
                Tensor::new(2, 3, lv).unwrap(),
            ).unwrap();
            prop_assert!(kl_to_marginal(&p) >= 0.0);
        }

        #[test]
        fn kl_vanishes_only_at_the_marginal(i in 0usize..6, delta in prop_oneof![-3.0f64..-1e-3, 1e-3f64..3.0],
                                            which in 0usize..2) {
            let mut mu = vec![0.0; 6];
            let mut lv = vec![0.0; 6];
            if which == 0 { mu[i] = delta } else { lv[i] = delta }
            let p = GaussianPosterior::new(Tensor::new(2, 3, mu).unwrap(), Tensor::new(2, 3, lv).unwrap()).unwrap();
            prop_assert!(kl_to_marginal(&p) > 1e-7);
        }
    }
}
