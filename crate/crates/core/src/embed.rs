//! Bounded-information semantic embedding.
//!
//! The mapper embeds a visual feature into descriptor space (`d_z = d_a`) and
//! is trained on the single-negative structured hinge
//!
//! ```text
//! max(0, Δ − a_yᵀ z + a_{y'}ᵀ z),   z ~ p_M(z|x)
//! ```
//!
//! subject to `E[KL(p_M(z|x) || N(0, I))] <= b`. The constraint is handled
//! by a Lagrangian with a projected multiplier updated after every optimizer
//! step. Prediction picks the candidate class whose descriptor has the largest
//! dot product with the posterior mean.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngExt;

use crate::data::DatasetBundle;
use crate::dual::DualState;
use crate::error::{Error, Result};
use crate::eval::{metrics_from_predictions, GzslMetrics};
use crate::mapper::{kl_term, map_point, reparameterize, MapperParams};
use crate::nn::Parameters;
use crate::optim::{AdamConfig, AdamState};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedConfig {
    pub margin: f64,
    /// Information bound `b`; `f64::INFINITY` disables the constraint.
    pub bound: f64,
    pub dual_step: f64,
    pub dual_init: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Sample `z` by reparameterization; `false` uses `z = mu` (a zero-variance head).
    pub sample_z: bool,
    /// Posterior samples per example and step.
    pub samples: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            bound: 5.0,
            dual_step: 1e-2,
            dual_init: 1.0,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            hidden: 128,
            seed: 0,
            sample_z: true,
            samples: 1,
        }
    }
}

impl EmbedConfig {
    /// Plain structured embedding: no information bound, deterministic features.
    pub fn plain_sje(mut self) -> Self {
        self.bound = f64::INFINITY;
        self.sample_z = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if !(self.bound >= 0.0) {
            return Err(Error::Config(format!("bound must be >= 0, got {}", self.bound)));
        }
        if !(self.dual_step >= 0.0 && self.dual_init >= 0.0) {
            return Err(Error::Config("dual step and initial multiplier must be >= 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.hidden == 0 || self.samples == 0 {
            return Err(Error::Config(
                "epochs, batch_size, hidden and samples must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Batch mean of `max(0, Δ − a_posᵀz + a_negᵀz)`; `positive[i]` and
/// `negative[i]` index rows of `attributes`.
pub fn sje_hinge<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    attributes: &Tensor<T>,
    positive: &[usize],
    negative: &[usize],
    margin: f64,
) -> Result<Var> {
    let n = tape.value(z).rows();
    if positive.len() != n || negative.len() != n {
        return Err(Error::dim(
            "sje_hinge",
            format!("{n} rows, {} positives, {} negatives", positive.len(), negative.len()),
        ));
    }
    if tape.value(z).cols() != attributes.cols() {
        return Err(Error::dim(
            "sje_hinge",
            format!(
                "embedding width {} vs descriptor width {}",
                tape.value(z).cols(),
                attributes.cols()
            ),
        ));
    }
    if let Some(i) = (0..n).find(|&i| positive[i] == negative[i]) {
        return Err(Error::Contract(format!(
            "row {i}: negative descriptor is the positive class {}",
            positive[i]
        )));
    }
    let a_pos = tape.constant(attributes.select_rows(positive)?);
    let a_neg = tape.constant(attributes.select_rows(negative)?);
    let diff = tape.sub(a_neg, a_pos)?;
    let s = tape.row_dot(diff, z)?;
    let s = tape.add_scalar(s, margin)?;
    let h = tape.max0(s)?;
    tape.mean(h)
}

/// `argmax_{c ∈ candidates} a_cᵀ M(x)` per row; ties go to the smallest class id.
pub fn predict_embed(
    params: &MapperParams<f32>,
    x: &Tensor<f32>,
    attributes: &Tensor<f32>,
    candidates: &[usize],
) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::Contract("empty candidate class set".into()));
    }
    if params.output_dim() != attributes.cols() {
        return Err(Error::dim(
            "predict_embed",
            format!(
                "embedding width {} vs descriptor width {}",
                params.output_dim(),
                attributes.cols()
            ),
        ));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let z = map_point(params, x)?;
    let a = attributes.select_rows(&sorted)?;
    let scores = z.matmul(&a.transpose())?;
    Ok(scores.argmax_rows().into_iter().map(|k| sorted[k]).collect())
}

/// One optimizer step, as seen by an observer (before the parameter update).
#[derive(Debug)]
pub struct EmbedStep<'a> {
    pub step: u64,
    pub epoch: usize,
    pub params: &'a MapperParams<f32>,
    /// Training-example indices into the bundle.
    pub batch: &'a [usize],
    pub negatives: &'a [usize],
    pub hinge: f64,
    pub kl: f64,
    /// Multiplier used in this step's objective.
    pub beta: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedEpoch {
    pub epoch: usize,
    pub hinge: f64,
    pub kl: f64,
    /// Multiplier at the end of the epoch.
    pub beta: f64,
    pub metrics: GzslMetrics,
    /// Whether the batch KL exceeded the bound on every step of the epoch.
    pub violated_throughout: bool,
    pub beta_start: f64,
}

#[derive(Debug, Clone)]
pub struct EmbedRun {
    pub params: MapperParams<f32>,
    pub log: Vec<EmbedEpoch>,
    /// Multiplier after every dual update.
    pub beta_trace: Vec<f64>,
}

pub fn train_embed(bundle: &DatasetBundle, config: &EmbedConfig) -> Result<EmbedRun> {
    train_embed_observed(bundle, config, |_| {})
}

/// Like [`train_embed`], calling `observer` before every parameter update.
pub fn train_embed_observed(
    bundle: &DatasetBundle,
    config: &EmbedConfig,
    mut observer: impl FnMut(&EmbedStep<'_>),
) -> Result<EmbedRun> {
    config.validate()?;
    if bundle.seen_classes.len() < 2 {
        return Err(Error::Data("embedding needs at least two seen classes".into()));
    }
    let mut rng = crate::rng_from_seed(config.seed);
    let d_a = bundle.attribute_dim();
    let mut params = MapperParams::<f32>::init(bundle.feature_dim(), config.hidden, d_a, &mut rng);
    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate), &params.tensors());
    let mut dual = DualState::new(config.bound, config.dual_init, config.dual_step);
    if !config.sample_z {
        dual = DualState::disabled(config.bound);
    }
    let seen = &bundle.seen_classes;
    let mut order = bundle.train_index.clone();
    let mut log = Vec::with_capacity(config.epochs);
    let mut beta_trace = Vec::new();
    let mut step: u64 = 0;
    let test = bundle.test_set();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        // one negative per example, redrawn every epoch
        let negatives: Vec<usize> = order
            .iter()
            .map(|&i| {
                let y = bundle.labels[i];
                let pick = rng.random_range(0..seen.len() - 1);
                let k = seen.iter().position(|&s| s == y).expect("train labels are seen");
                seen[if pick >= k { pick + 1 } else { pick }]
            })
            .collect();

        let (mut hinge_sum, mut kl_sum, mut rows) = (0.0, 0.0, 0usize);
        let beta_start = dual.beta;
        let mut violated_throughout = true;
        for (chunk, negs) in order
            .chunks(config.batch_size)
            .zip(negatives.chunks(config.batch_size))
        {
            let x = bundle.features.select_rows(chunk)?;
            let positive: Vec<usize> = chunk.iter().map(|&i| bundle.labels[i]).collect();
            let eps: Vec<Tensor<f32>> = if config.sample_z {
                (0..config.samples)
                    .map(|_| Tensor::standard_normal(chunk.len(), d_a, &mut rng))
                    .collect()
            } else {
                Vec::new()
            };
            let fail = |e: Error| Error::Training {
                step,
                detail: e.to_string(),
            };

            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, true);
            let xv = tape.constant(x);
            let post = bound.posterior(&mut tape, xv).map_err(fail)?;
            let hinge = if config.sample_z {
                let mut acc: Option<Var> = None;
                for e in &eps {
                    let ev = tape.constant(e.clone());
                    let z = reparameterize(&mut tape, post, ev).map_err(fail)?;
                    let h = sje_hinge(&mut tape, z, &bundle.attributes, &positive, negs, config.margin)
                        .map_err(fail)?;
                    acc = Some(match acc {
                        None => h,
                        Some(a) => tape.add(a, h).map_err(fail)?,
                    });
                }
                let total = acc.expect("samples >= 1");
                tape.scale(total, 1.0 / config.samples as f64).map_err(fail)?
            } else {
                sje_hinge(&mut tape, post.mu, &bundle.attributes, &positive, negs, config.margin)
                    .map_err(fail)?
            };
            let kl = kl_term(&mut tape, post).map_err(fail)?;
            let beta = dual.weight();
            let loss = if beta > 0.0 {
                let pen = tape.scale(kl, beta).map_err(fail)?;
                tape.add(hinge, pen).map_err(fail)?
            } else {
                hinge
            };

            let hinge_v = tape.scalar(hinge)?;
            let kl_v = tape.scalar(kl)?;
            let objective = hinge_v + dual.penalty(kl_v);
            if !objective.is_finite() {
                return Err(Error::Training {
                    step,
                    detail: "objective is not finite".into(),
                });
            }
            observer(&EmbedStep {
                step,
                epoch,
                params: &params,
                batch: chunk,
                negatives: negs,
                hinge: hinge_v,
                kl: kl_v,
                beta,
                objective,
            });

            let grads = tape.backward(loss).map_err(fail)?.collect(&bound.vars());
            adam.step(&mut params.tensors_mut(), &grads).map_err(fail)?;
            if dual.is_active() {
                violated_throughout &= kl_v > dual.bound;
                dual.update(kl_v);
                beta_trace.push(dual.beta);
            } else {
                violated_throughout = false;
                dual.update(kl_v);
            }

            hinge_sum += hinge_v * chunk.len() as f64;
            kl_sum += kl_v * chunk.len() as f64;
            rows += chunk.len();
            step += 1;
        }

        let preds = predict_embed(&params, &test.features, &bundle.attributes, &bundle.all_classes())?;
        let metrics =
            metrics_from_predictions(&preds, &test.labels, &bundle.seen_classes, &bundle.unseen_classes)?;
        log.push(EmbedEpoch {
            epoch,
            hinge: hinge_sum / rows as f64,
            kl: kl_sum / rows as f64,
            beta: dual.beta,
            metrics,
            violated_throughout,
            beta_start,
        });
    }

    Ok(EmbedRun {
        params,
        log,
        beta_trace,
    })
}
