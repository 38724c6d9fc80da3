//! Bounded-information feature generation.
//!
//! A conditional generator `G(a, ε)` synthesizes visual features; the mapper
//! `M` sends real and synthetic features into the redundancy-free space, where
//! an unconditional critic `D` compares them. The joint objective for
//! `(G, M, centres)` at every generator step is
//!
//! ```text
//! adv(D, M∘G) + λ_r·L_center(M, c) + λ_c·L_cls(G)
//!     + β_real·(KL_real − b) + β_fake·(KL_fake − b)
//! ```
//!
//! with `β_real, β_fake >= 0` updated by projected dual ascent. `L_cls` is the
//! cross-entropy of a frozen softmax `q` pretrained on real seen features, so
//! it acts on the generator's output in the original feature space.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngExt;

use crate::classifier::{SoftmaxClassifier, SoftmaxConfig};
use crate::data::{DatasetBundle, LabeledSet};
use crate::dual::DualState;
use crate::error::{Error, Result};
use crate::eval::{evaluate, train_final_softmax, Evaluation, Predictor};
use crate::mapper::{
    kl_term, map_point, map_posterior, reparameterize, sample_reparam, BoundMapper, MapperParams,
};
use crate::nn::{Linear, LinearVars, Parameters};
use crate::optim::{clip_weights, AdamConfig, AdamState};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

/// `x̃ = W₂·leaky_relu(W₁·[a, ε] + b₁) + b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<T = f32> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
    pub noise_dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGenerator {
    pub hidden: LinearVars,
    pub output: LinearVars,
}

impl<T: Real> GeneratorParams<T> {
    pub fn init(attr_dim: usize, noise_dim: usize, hidden: usize, out_dim: usize, rng: &mut crate::Rng) -> Self {
        Self {
            hidden: Linear::init(attr_dim + noise_dim, hidden, rng),
            output: Linear::init(hidden, out_dim, rng),
            noise_dim,
        }
    }

    pub fn attr_dim(&self) -> usize {
        self.hidden.fan_in() - self.noise_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output.fan_out()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundGenerator {
        BoundGenerator {
            hidden: self.hidden.bind(tape, trainable),
            output: self.output.bind(tape, trainable),
        }
    }

    fn input(&self, a: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
        if a.cols() != self.attr_dim() || eps.cols() != self.noise_dim || a.rows() != eps.rows() {
            return Err(Error::dim(
                "generate",
                format!(
                    "descriptors {:?} and noise {:?} for a generator taking {} + {}",
                    a.shape(),
                    eps.shape(),
                    self.attr_dim(),
                    self.noise_dim
                ),
            ));
        }
        a.concat_cols(eps)
    }
}

impl<T: Real> Parameters<T> for GeneratorParams<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = self.hidden.tensors();
        v.extend(self.output.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.hidden.tensors_mut();
        v.extend(self.output.tensors_mut());
        v
    }
}

impl BoundGenerator {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.hidden.vars().to_vec();
        v.extend(self.output.vars());
        v
    }

    /// `input` is `[a | ε]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, input: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, input)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        self.output.forward(tape, h)
    }
}

/// Synthesizes features for descriptors `a` and externally drawn noise `eps`.
pub fn generate<T: Real>(gen: &GeneratorParams<T>, a: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    let input = gen.input(a, eps)?;
    let h = gen.hidden.apply(&input)?;
    let slope = T::from_f64(LEAKY_SLOPE);
    let h = h.map(|v| if v > T::zero() { v } else { v * slope });
    let out = gen.output.apply(&h)?;
    if !out.is_finite() {
        return Err(Error::Numeric { primitive: "generate" });
    }
    Ok(out)
}

/// `score = W₂·relu(W₁·z + b₁) + b₂`, one scalar per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams<T = f32> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundCritic {
    pub hidden: LinearVars,
    pub output: LinearVars,
}

impl<T: Real> CriticParams<T> {
    pub fn init(z_dim: usize, hidden: usize, rng: &mut crate::Rng) -> Self {
        Self {
            hidden: Linear::init(z_dim, hidden, rng),
            output: Linear::init(hidden, 1, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundCritic {
        BoundCritic {
            hidden: self.hidden.bind(tape, trainable),
            output: self.output.bind(tape, trainable),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().map(|t| t.max_abs()).fold(0.0, f64::max)
    }
}

impl<T: Real> Parameters<T> for CriticParams<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = self.hidden.tensors();
        v.extend(self.output.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.hidden.tensors_mut();
        v.extend(self.output.tensors_mut());
        v
    }
}

impl BoundCritic {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.hidden.vars().to_vec();
        v.extend(self.output.vars());
        v
    }

    pub fn score<T: Real>(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, z)?;
        let h = tape.relu(h)?;
        self.output.forward(tape, h)
    }
}

/// One learnable centre per seen class, rows in ascending class order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters<T = f32> {
    pub classes: Vec<usize>,
    pub centers: Tensor<T>,
}

impl<T: Real> ClassCenters<T> {
    pub fn zeros(classes: &[usize], dim: usize) -> Self {
        let mut classes = classes.to_vec();
        classes.sort_unstable();
        Self {
            centers: Tensor::zeros(classes.len(), dim),
            classes,
        }
    }

    pub fn row_of(&self, class: usize) -> Result<usize> {
        self.classes
            .binary_search(&class)
            .map_err(|_| Error::Contract(format!("class {class} has no centre")))
    }

    /// Per-class mean of `z` over the rows labelled with that class.
    pub fn from_means(classes: &[usize], z: &Tensor<T>, labels: &[usize]) -> Result<Self> {
        let mut out = Self::zeros(classes, z.cols());
        let mut counts = alloc::vec![0usize; out.classes.len()];
        let mut acc = alloc::vec![0.0f64; out.classes.len() * z.cols()];
        for (r, &y) in labels.iter().enumerate() {
            let k = out.row_of(y)?;
            counts[k] += 1;
            for (c, v) in z.row(r).iter().enumerate() {
                acc[k * z.cols() + c] += v.as_f64();
            }
        }
        if let Some(k) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Data(format!("no rows for class {}", out.classes[k])));
        }
        for k in 0..out.classes.len() {
            for c in 0..z.cols() {
                out.centers
                    .set(k, c, T::from_f64(acc[k * z.cols() + c] / counts[k] as f64));
            }
        }
        Ok(out)
    }
}

/// Critic objective family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarialMode {
    /// Log-loss value `E[log D(z)] + E[log(1 − D(z̃))]` with a sigmoid critic.
    Minimax,
    /// Wasserstein critic with weight clipping.
    WganClip,
}

impl core::str::FromStr for AdversarialMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimax" => Ok(Self::Minimax),
            "wgan-clip" | "wgan" => Ok(Self::WganClip),
            other => Err(Error::Config(format!("unknown adversarial mode '{other}'"))),
        }
    }
}

impl core::fmt::Display for AdversarialMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::Minimax => "minimax",
            Self::WganClip => "wgan-clip",
        })
    }
}

/// Critic-side and generator-side losses for one pair of batches.
#[derive(Debug, Clone, Copy)]
pub struct AdversarialLosses {
    pub critic: Var,
    pub generator: Var,
}

pub fn adversarial_losses<T: Real>(
    tape: &mut Tape<T>,
    critic: &BoundCritic,
    z_real: Var,
    z_fake: Var,
    mode: AdversarialMode,
) -> Result<AdversarialLosses> {
    let s_real = critic.score(tape, z_real)?;
    let s_fake = critic.score(tape, z_fake)?;
    match mode {
        AdversarialMode::WganClip => {
            let m_real = tape.mean(s_real)?;
            let m_fake = tape.mean(s_fake)?;
            let critic = tape.sub(m_fake, m_real)?;
            let generator = tape.neg(m_fake)?;
            Ok(AdversarialLosses { critic, generator })
        }
        AdversarialMode::Minimax => {
            // log D(z) and log(1 − D(z̃)) = log σ(−s)
            let d_real = tape.sigmoid(s_real)?;
            let log_real = tape.log(d_real)?;
            let neg_fake = tape.neg(s_fake)?;
            let d_fake_c = tape.sigmoid(neg_fake)?;
            let log_fake = tape.log(d_fake_c)?;
            let lr = tape.mean(log_real)?;
            let lf = tape.mean(log_fake)?;
            let value = tape.add(lr, lf)?;
            let critic = tape.neg(value)?;
            Ok(AdversarialLosses { critic, generator: lf })
        }
    }
}

/// `−E[log q(y | x̃)]` under the frozen classifier `q`; `labels` must be seen classes.
pub fn cls_loss<T: Real>(
    tape: &mut Tape<T>,
    q: &SoftmaxClassifier<T>,
    q_vars: LinearVars,
    x_fake: Var,
    labels: &[usize],
) -> Result<Var> {
    q.loss_on_tape(tape, q_vars, x_fake, labels)
}

/// Batch mean of `max(0, Δ + ‖z − c_y‖² − ‖z − c_{y'}‖²)`.
pub fn center_margin_loss<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    labels: &[usize],
    negatives: &[usize],
    centers: &ClassCenters<T>,
    centers_var: Var,
    margin: f64,
) -> Result<Var> {
    let n = tape.value(z).rows();
    if labels.len() != n || negatives.len() != n {
        return Err(Error::dim(
            "center_margin_loss",
            format!("{n} rows, {} labels, {} negatives", labels.len(), negatives.len()),
        ));
    }
    if let Some(i) = (0..n).find(|&i| labels[i] == negatives[i]) {
        return Err(Error::Contract(format!(
            "row {i}: negative class equals the label {}",
            labels[i]
        )));
    }
    let k = centers.classes.len();
    let pos: Vec<usize> = labels.iter().map(|&y| centers.row_of(y)).collect::<Result<_>>()?;
    let neg: Vec<usize> = negatives.iter().map(|&y| centers.row_of(y)).collect::<Result<_>>()?;
    let pick_pos = tape.constant(Tensor::one_hot(&pos, k)?);
    let pick_neg = tape.constant(Tensor::one_hot(&neg, k)?);
    let c_pos = tape.matmul(pick_pos, centers_var)?;
    let c_neg = tape.matmul(pick_neg, centers_var)?;
    let d_pos = tape.sub(z, c_pos)?;
    let d_pos = tape.square(d_pos)?;
    let d_pos = tape.sum_cols(d_pos)?;
    let d_neg = tape.sub(z, c_neg)?;
    let d_neg = tape.square(d_neg)?;
    let d_neg = tape.sum_cols(d_neg)?;
    let gap = tape.sub(d_pos, d_neg)?;
    let gap = tape.add_scalar(gap, margin)?;
    let h = tape.max0(gap)?;
    tape.mean(h)
}

/// Fits `q` on the original seen training features.
pub fn pretrain_classifier(bundle: &DatasetBundle, config: SoftmaxConfig) -> Result<SoftmaxClassifier<f32>> {
    let train = bundle.train_set();
    let (q, _) = SoftmaxClassifier::train(&train, &bundle.seen_classes, config)?;
    Ok(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub lambda_r: f64,
    pub lambda_c: f64,
    /// Information bound `b` shared by both constraints; `INFINITY` disables them.
    pub bound: f64,
    pub dual_step: f64,
    pub dual_init: f64,
    /// Pin both multipliers to zero (the no-MI ablation).
    pub disable_mi: bool,
    pub center_margin: f64,
    pub n_critic: usize,
    pub clip: f64,
    pub mode: AdversarialMode,
    pub lr_generator: f64,
    pub lr_mapper: f64,
    pub lr_critic: f64,
    pub lr_centers: f64,
    pub batch_size: usize,
    pub z_dim: usize,
    pub generator_hidden: usize,
    pub mapper_hidden: usize,
    pub critic_hidden: usize,
    /// Noise width; `None` uses the descriptor width.
    pub noise_dim: Option<usize>,
    pub epochs: usize,
    /// Epochs before centres are initialised and the centre loss switches on.
    pub warmup_epochs: usize,
    pub seed: u64,
    pub synth_per_class: usize,
    /// Use sampled rather than mean features to build the final training set.
    pub sample_final: bool,
    /// Keep the mapper at its initial value.
    pub freeze_mapper: bool,
    pub classifier: SoftmaxConfig,
    pub final_softmax: SoftmaxConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            lambda_r: 0.1,
            lambda_c: 0.5,
            bound: 8.0,
            dual_step: 1e-3,
            dual_init: 0.0,
            disable_mi: false,
            center_margin: 1.0,
            n_critic: 5,
            clip: 0.01,
            mode: AdversarialMode::WganClip,
            lr_generator: 1e-3,
            lr_mapper: 1e-3,
            lr_critic: 1e-3,
            lr_centers: 1e-3,
            batch_size: 64,
            z_dim: 64,
            generator_hidden: 256,
            mapper_hidden: 128,
            critic_hidden: 64,
            noise_dim: None,
            epochs: 80,
            warmup_epochs: 1,
            seed: 0,
            synth_per_class: 200,
            sample_final: true,
            freeze_mapper: false,
            classifier: SoftmaxConfig::default(),
            final_softmax: SoftmaxConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_r >= 0.0 && self.lambda_c >= 0.0) {
            return Err(Error::Config("lambda_r and lambda_c must be >= 0".into()));
        }
        if !(self.bound >= 0.0) {
            return Err(Error::Config(format!("bound must be >= 0, got {}", self.bound)));
        }
        if self.n_critic < 1 {
            return Err(Error::Config("n_critic must be >= 1".into()));
        }
        if self.mode == AdversarialMode::WganClip && !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip bound must be > 0, got {}", self.clip)));
        }
        if !(self.center_margin > 0.0) {
            return Err(Error::Config("center margin must be > 0".into()));
        }
        for (name, lr) in [
            ("lr_generator", self.lr_generator),
            ("lr_mapper", self.lr_mapper),
            ("lr_critic", self.lr_critic),
            ("lr_centers", self.lr_centers),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        let sizes = [
            self.batch_size,
            self.z_dim,
            self.generator_hidden,
            self.mapper_hidden,
            self.critic_hidden,
            self.epochs,
            self.synth_per_class,
        ];
        if sizes.contains(&0) || self.noise_dim == Some(0) {
            return Err(Error::Config("sizes, epochs and synthesis count must be >= 1".into()));
        }
        if self.warmup_epochs >= self.epochs && self.lambda_r > 0.0 {
            return Err(Error::Config("warmup_epochs must be < epochs".into()));
        }
        Ok(())
    }
}

/// Every term of one generator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenStepLog {
    pub step: u64,
    pub epoch: usize,
    /// Critic loss of the last critic update before this step.
    pub critic: f64,
    /// Largest critic weight magnitude after that update.
    pub critic_max_abs: f64,
    pub adversarial: f64,
    pub center: f64,
    pub cls: f64,
    pub kl_real: f64,
    pub kl_fake: f64,
    pub beta_real: f64,
    pub beta_fake: f64,
    pub penalty_real: f64,
    pub penalty_fake: f64,
    pub lambda_r: f64,
    pub lambda_c: f64,
    pub total: f64,
}

impl GenStepLog {
    /// Sum of the weighted components; equals `total` by construction.
    pub fn recomposed(&self) -> f64 {
        self.adversarial
            + self.lambda_r * self.center
            + self.lambda_c * self.cls
            + self.penalty_real
            + self.penalty_fake
    }
}

/// Per-epoch means of the step terms; `beta_*` are end-of-epoch values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenEpochLog {
    pub epoch: usize,
    pub critic: f64,
    pub adversarial: f64,
    pub center: f64,
    pub cls: f64,
    pub kl_real: f64,
    pub kl_fake: f64,
    pub beta_real: f64,
    pub beta_fake: f64,
    pub penalty_real: f64,
    pub penalty_fake: f64,
    pub total: f64,
    pub real_violated_throughout: bool,
    pub fake_violated_throughout: bool,
    pub beta_real_start: f64,
    pub beta_fake_start: f64,
}

#[derive(Debug, Clone)]
pub struct GenModels {
    pub generator: GeneratorParams<f32>,
    pub mapper: MapperParams<f32>,
    pub centers: ClassCenters<f32>,
    pub critic: CriticParams<f32>,
    pub classifier: SoftmaxClassifier<f32>,
}

#[derive(Debug, Clone)]
pub struct GenRun {
    pub models: GenModels,
    pub steps: Vec<GenStepLog>,
    pub epochs: Vec<GenEpochLog>,
    /// Whether each multiplier was live during training.
    pub real_dual_active: bool,
    pub fake_dual_active: bool,
    /// Centres as they were right after initialisation.
    pub initial_centers: ClassCenters<f32>,
}

/// Cycles through a shuffled index list, reshuffling at every wrap.
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
}

impl BatchCursor {
    fn new(order: Vec<usize>) -> Self {
        Self {
            pos: order.len(),
            order,
        }
    }

    fn next(&mut self, size: usize, rng: &mut crate::Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

fn other_class(classes: &[usize], y: usize, rng: &mut crate::Rng) -> usize {
    let k = classes.iter().position(|&c| c == y).expect("label among classes");
    let pick = rng.random_range(0..classes.len() - 1);
    classes[if pick >= k { pick + 1 } else { pick }]
}

/// Alternating training of critic and `(G, M, centres)`.
pub fn train_gen(bundle: &DatasetBundle, config: &GenConfig) -> Result<GenRun> {
    config.validate()?;
    let classifier = pretrain_classifier(bundle, config.classifier)?;
    train_gen_with_classifier(bundle, config, classifier, None)
}

/// [`train_gen`] with a supplied pretrained `q` and, optionally, a fixed initial mapper.
pub fn train_gen_with_classifier(
    bundle: &DatasetBundle,
    config: &GenConfig,
    classifier: SoftmaxClassifier<f32>,
    mapper_init: Option<MapperParams<f32>>,
) -> Result<GenRun> {
    config.validate()?;
    if bundle.seen_classes.len() < 2 {
        return Err(Error::Data("generation needs at least two seen classes".into()));
    }
    let d_x = bundle.feature_dim();
    let d_a = bundle.attribute_dim();
    let noise_dim = config.noise_dim.unwrap_or(d_a);
    let mut rng = crate::rng_from_seed(config.seed);

    let mut generator = GeneratorParams::<f32>::init(d_a, noise_dim, config.generator_hidden, d_x, &mut rng);
    let mut mapper = match mapper_init {
        Some(m) => {
            if m.input_dim() != d_x {
                return Err(Error::dim("train_gen", "initial mapper input width"));
            }
            m
        }
        None => MapperParams::init(d_x, config.mapper_hidden, config.z_dim, &mut rng),
    };
    let z_dim = mapper.output_dim();
    let mut critic = CriticParams::<f32>::init(z_dim, config.critic_hidden, &mut rng);
    if config.mode == AdversarialMode::WganClip {
        clip_weights(&mut critic.tensors_mut(), config.clip)?;
    }
    let mut centers = ClassCenters::<f32>::zeros(&bundle.seen_classes, z_dim);
    let mut initial_centers = centers.clone();

    let mut adam_g = AdamState::new(AdamConfig::with_lr(config.lr_generator), &generator.tensors());
    let mut adam_m = AdamState::new(AdamConfig::with_lr(config.lr_mapper), &mapper.tensors());
    let mut adam_d = AdamState::new(AdamConfig::with_lr(config.lr_critic), &critic.tensors());
    let mut adam_c = AdamState::new(AdamConfig::with_lr(config.lr_centers), &[&centers.centers]);

    let (mut dual_real, mut dual_fake) = if config.disable_mi || !config.bound.is_finite() {
        (DualState::disabled(config.bound), DualState::disabled(config.bound))
    } else {
        (
            DualState::new(config.bound, config.dual_init, config.dual_step),
            DualState::new(config.bound, config.dual_init, config.dual_step),
        )
    };

    let q_frozen = classifier.clone();
    let mut critic_cursor = BatchCursor::new(bundle.train_index.clone());
    let mut gen_cursor = BatchCursor::new(bundle.train_index.clone());
    let per_epoch = bundle.train_index.len().div_ceil(config.batch_size);
    let batch = config.batch_size.min(bundle.train_index.len());
    let seen = &bundle.seen_classes;
    let train_mapper = !config.freeze_mapper;

    let mut steps = Vec::with_capacity(per_epoch * config.epochs);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;
    let mut centers_live = false;

    for epoch in 0..config.epochs {
        if config.lambda_r > 0.0 && !centers_live && epoch >= config.warmup_epochs {
            let train = bundle.train_set();
            let z = map_point(&mapper, &train.features)?;
            centers = ClassCenters::from_means(seen, &z, &train.labels)?;
            initial_centers = centers.clone();
            adam_c = AdamState::new(AdamConfig::with_lr(config.lr_centers), &[&centers.centers]);
            centers_live = true;
        }
        let beta_real_start = dual_real.beta;
        let beta_fake_start = dual_fake.beta;
        let mut real_violated = dual_real.is_active();
        let mut fake_violated = dual_fake.is_active();
        let first_step = steps.len();

        for _ in 0..per_epoch {
            let fail = |e: Error| Error::Training {
                step,
                detail: e.to_string(),
            };

            // critic updates on detached features
            let mut critic_loss = 0.0;
            for _ in 0..config.n_critic {
                let idx = critic_cursor.next(batch, &mut rng);
                let labels: Vec<usize> = idx.iter().map(|&i| bundle.labels[i]).collect();
                let x = bundle.features.select_rows(&idx)?;
                let a = bundle.attributes.select_rows(&labels)?;
                let eps = Tensor::standard_normal(batch, noise_dim, &mut rng);
                let x_fake = generate(&generator, &a, &eps).map_err(fail)?;
                let e_real = Tensor::standard_normal(batch, z_dim, &mut rng);
                let e_fake = Tensor::standard_normal(batch, z_dim, &mut rng);
                let z_real = sample_reparam(&map_posterior(&mapper, &x).map_err(fail)?, &e_real)?;
                let z_fake = sample_reparam(&map_posterior(&mapper, &x_fake).map_err(fail)?, &e_fake)?;

                let mut tape = Tape::new();
                let d = critic.bind(&mut tape, true);
                let zr = tape.constant(z_real);
                let zf = tape.constant(z_fake);
                let losses = adversarial_losses(&mut tape, &d, zr, zf, config.mode).map_err(fail)?;
                critic_loss = tape.scalar(losses.critic)?;
                let grads = tape.backward(losses.critic).map_err(fail)?.collect(&d.vars());
                adam_d.step(&mut critic.tensors_mut(), &grads).map_err(fail)?;
                if config.mode == AdversarialMode::WganClip {
                    clip_weights(&mut critic.tensors_mut(), config.clip)?;
                }
            }

            // joint step on G, M and the centres
            let idx = gen_cursor.next(batch, &mut rng);
            let labels: Vec<usize> = idx.iter().map(|&i| bundle.labels[i]).collect();
            let negatives: Vec<usize> = labels.iter().map(|&y| other_class(seen, y, &mut rng)).collect();
            let x = bundle.features.select_rows(&idx)?;
            let a = bundle.attributes.select_rows(&labels)?;
            let eps = Tensor::standard_normal(batch, noise_dim, &mut rng);
            let e_real = Tensor::standard_normal(batch, z_dim, &mut rng);
            let e_fake = Tensor::standard_normal(batch, z_dim, &mut rng);

            let mut tape = Tape::new();
            let g = generator.bind(&mut tape, true);
            let m: BoundMapper = mapper.bind(&mut tape, train_mapper);
            let d = critic.bind(&mut tape, false);
            let q_vars = q_frozen.bind(&mut tape, false);
            let c_var = tape.param(centers.centers.clone());

            let input = tape.constant(a.concat_cols(&eps)?);
            let x_fake = g.forward(&mut tape, input).map_err(fail)?;
            let xv = tape.constant(x);
            let post_real = m.posterior(&mut tape, xv).map_err(fail)?;
            let post_fake = m.posterior(&mut tape, x_fake).map_err(fail)?;
            let er = tape.constant(e_real);
            let ef = tape.constant(e_fake);
            let z_real = reparameterize(&mut tape, post_real, er).map_err(fail)?;
            let z_fake = reparameterize(&mut tape, post_fake, ef).map_err(fail)?;

            let adv = adversarial_losses(&mut tape, &d, z_real, z_fake, config.mode).map_err(fail)?;
            let mut loss = adv.generator;
            let center = if centers_live {
                let c = center_margin_loss(&mut tape, z_real, &labels, &negatives, &centers, c_var, config.center_margin)
                    .map_err(fail)?;
                let w = tape.scale(c, config.lambda_r).map_err(fail)?;
                loss = tape.add(loss, w).map_err(fail)?;
                Some(c)
            } else {
                None
            };
            let cls = cls_loss(&mut tape, &q_frozen, q_vars, x_fake, &labels).map_err(fail)?;
            if config.lambda_c > 0.0 {
                let w = tape.scale(cls, config.lambda_c).map_err(fail)?;
                loss = tape.add(loss, w).map_err(fail)?;
            }
            let kl_real = kl_term(&mut tape, post_real).map_err(fail)?;
            let kl_fake = kl_term(&mut tape, post_fake).map_err(fail)?;
            let (beta_real, beta_fake) = (dual_real.weight(), dual_fake.weight());
            if beta_real > 0.0 {
                let w = tape.scale(kl_real, beta_real).map_err(fail)?;
                loss = tape.add(loss, w).map_err(fail)?;
            }
            if beta_fake > 0.0 {
                let w = tape.scale(kl_fake, beta_fake).map_err(fail)?;
                loss = tape.add(loss, w).map_err(fail)?;
            }

            let adv_v = tape.scalar(adv.generator)?;
            let center_v = match center {
                Some(c) => tape.scalar(c)?,
                None => 0.0,
            };
            let cls_v = tape.scalar(cls)?;
            let kl_real_v = tape.scalar(kl_real)?;
            let kl_fake_v = tape.scalar(kl_fake)?;
            let lambda_r = if centers_live { config.lambda_r } else { 0.0 };
            let mut record = GenStepLog {
                step,
                epoch,
                critic: critic_loss,
                critic_max_abs: critic.max_abs(),
                adversarial: adv_v,
                center: center_v,
                cls: cls_v,
                kl_real: kl_real_v,
                kl_fake: kl_fake_v,
                beta_real,
                beta_fake,
                penalty_real: dual_real.penalty(kl_real_v),
                penalty_fake: dual_fake.penalty(kl_fake_v),
                lambda_r,
                lambda_c: config.lambda_c,
                total: 0.0,
            };
            record.total = record.recomposed();
            if !record.total.is_finite() {
                return Err(Error::Training {
                    step,
                    detail: "objective is not finite".into(),
                });
            }

            let grads = tape.backward(loss).map_err(fail)?;
            adam_g
                .step(&mut generator.tensors_mut(), &grads.collect(&g.vars()))
                .map_err(fail)?;
            if train_mapper {
                adam_m
                    .step(&mut mapper.tensors_mut(), &grads.collect(&m.vars()))
                    .map_err(fail)?;
            }
            if centers_live {
                adam_c
                    .step(&mut [&mut centers.centers], &[grads.get(c_var)])
                    .map_err(fail)?;
            }
            real_violated &= kl_real_v > config.bound;
            fake_violated &= kl_fake_v > config.bound;
            dual_real.update(kl_real_v);
            dual_fake.update(kl_fake_v);
            steps.push(record);
            step += 1;
        }

        let slice = &steps[first_step..];
        let mean = |f: fn(&GenStepLog) -> f64| slice.iter().map(f).sum::<f64>() / slice.len() as f64;
        epochs.push(GenEpochLog {
            epoch,
            critic: mean(|s| s.critic),
            adversarial: mean(|s| s.adversarial),
            center: mean(|s| s.center),
            cls: mean(|s| s.cls),
            kl_real: mean(|s| s.kl_real),
            kl_fake: mean(|s| s.kl_fake),
            beta_real: dual_real.beta,
            beta_fake: dual_fake.beta,
            penalty_real: mean(|s| s.penalty_real),
            penalty_fake: mean(|s| s.penalty_fake),
            total: mean(|s| s.total),
            real_violated_throughout: real_violated,
            fake_violated_throughout: fake_violated,
            beta_real_start,
            beta_fake_start,
        });
    }

    Ok(GenRun {
        models: GenModels {
            generator,
            mapper,
            centers,
            critic,
            classifier,
        },
        steps,
        epochs,
        real_dual_active: dual_real.is_active(),
        fake_dual_active: dual_fake.is_active(),
        initial_centers,
    })
}

/// Draws `count` features per class through `M∘G`, labelled by class.
///
/// Each class uses its own noise stream seeded with `seed ^ class`, so the
/// output for one class does not depend on which other classes are requested.
pub fn synthesize_unseen(
    generator: &GeneratorParams<f32>,
    mapper: &MapperParams<f32>,
    attributes: &Tensor<f32>,
    classes: &[usize],
    count: usize,
    seed: u64,
    sample: bool,
) -> Result<LabeledSet<f32>> {
    if count == 0 {
        return Err(Error::Config("synthesis count must be >= 1".into()));
    }
    let mut out = LabeledSet {
        features: Tensor::zeros(0, mapper.output_dim()),
        labels: Vec::new(),
    };
    for &class in classes {
        if class >= attributes.rows() {
            return Err(Error::Data(format!("class {class} has no descriptor")));
        }
        let mut rng = crate::rng_from_seed(seed ^ class as u64);
        let a = attributes.select_rows(&alloc::vec![class; count])?;
        let eps = Tensor::standard_normal(count, generator.noise_dim, &mut rng);
        let x = generate(generator, &a, &eps)?;
        let z = if sample {
            let post = map_posterior(mapper, &x)?;
            let e = Tensor::standard_normal(count, mapper.output_dim(), &mut rng);
            sample_reparam(&post, &e)?
        } else {
            map_point(mapper, &x)?
        };
        out.features = out.features.concat_rows(&z)?;
        out.labels.extend(core::iter::repeat_n(class, count));
    }
    Ok(out)
}

/// Seed of the unseen-class noise streams used for the final classifier.
pub fn synthesis_seed(run_seed: u64) -> u64 {
    run_seed.wrapping_add(0xC0FFEE)
}

/// Everything produced by one generation run, through to the GZSL metrics.
#[derive(Debug, Clone)]
pub struct GenOutcome {
    pub run: GenRun,
    pub final_classifier: SoftmaxClassifier<f32>,
    pub evaluation: Evaluation,
}

/// Final classifier and evaluation for trained models with `count` synthetic rows per unseen class.
pub fn finish_generation(
    bundle: &DatasetBundle,
    models: &GenModels,
    config: &GenConfig,
    count: usize,
) -> Result<(SoftmaxClassifier<f32>, Evaluation)> {
    let train = bundle.train_set();
    let features = if config.sample_final {
        let post = map_posterior(&models.mapper, &train.features)?;
        let mut rng = crate::rng_from_seed(config.seed.wrapping_add(0x5A3B1E));
        let eps = Tensor::standard_normal(train.len(), models.mapper.output_dim(), &mut rng);
        sample_reparam(&post, &eps)?
    } else {
        map_point(&models.mapper, &train.features)?
    };
    let real = LabeledSet {
        features,
        labels: train.labels,
    };
    let synth = synthesize_unseen(
        &models.generator,
        &models.mapper,
        &bundle.attributes,
        &bundle.unseen_classes,
        count,
        synthesis_seed(config.seed),
        config.sample_final,
    )?;
    let classifier = train_final_softmax(&real, &synth, &bundle.all_classes(), config.final_softmax)?;
    let evaluation = evaluate(
        bundle,
        Predictor::Generation {
            mapper: &models.mapper,
            classifier: &classifier,
        },
    )?;
    Ok((classifier, evaluation))
}

/// Train, synthesize, fit the final softmax and evaluate.
pub fn run_generation(bundle: &DatasetBundle, config: &GenConfig) -> Result<GenOutcome> {
    let run = train_gen(bundle, config)?;
    let (final_classifier, evaluation) = finish_generation(bundle, &run.models, config, config.synth_per_class)?;
    Ok(GenOutcome {
        run,
        final_classifier,
        evaluation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_generator_emits_output_bias() {
        let mut g = GeneratorParams::<f32> {
            hidden: Linear::zeros(5, 7),
            output: Linear::zeros(7, 4),
            noise_dim: 2,
        };
        g.output.bias = Tensor::new(1, 4, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let mut rng = crate::rng_from_seed(0);
        let a = Tensor::standard_normal(6, 3, &mut rng);
        let e = Tensor::standard_normal(6, 2, &mut rng);
        let x = generate(&g, &a, &e).unwrap();
        for r in 0..6 {
            assert_eq!(x.row(r), g.output.bias.row(0));
        }
    }

    #[test]
    fn generator_is_deterministic_and_checks_shapes() {
        let mut rng = crate::rng_from_seed(1);
        let g = GeneratorParams::<f32>::init(3, 2, 8, 4, &mut rng);
        let a = Tensor::standard_normal(5, 3, &mut rng);
        let e = Tensor::standard_normal(5, 2, &mut rng);
        assert_eq!(generate(&g, &a, &e).unwrap(), generate(&g, &a, &e).unwrap());
        assert!(generate(&g, &a, &Tensor::zeros(5, 3)).is_err());
        assert!(generate(&g, &a, &Tensor::zeros(4, 2)).is_err());
    }

    #[test]
    fn tape_and_direct_generator_agree() {
        let mut rng = crate::rng_from_seed(2);
        let g = GeneratorParams::<f64>::init(3, 2, 8, 4, &mut rng);
        let a = Tensor::standard_normal(5, 3, &mut rng);
        let e = Tensor::standard_normal(5, 2, &mut rng);
        let mut tape = Tape::new();
        let b = g.bind(&mut tape, true);
        let input = tape.constant(a.concat_cols(&e).unwrap());
        let out = b.forward(&mut tape, input).unwrap();
        assert_eq!(tape.value(out), &generate(&g, &a, &e).unwrap());
    }

    fn centers_2d() -> ClassCenters<f64> {
        ClassCenters {
            classes: vec![0, 1],
            centers: Tensor::zeros(2, 2),
        }
    }

    #[test]
    fn center_loss_examples() {
        // z = c_y, ||z - c_y'||^2 = 3
        let mut c = centers_2d();
        c.centers = Tensor::new(2, 2, vec![1.0, 1.0, 1.0 + 3f64.sqrt(), 1.0]).unwrap();
        let mut tape = Tape::new();
        let cv = tape.param(c.centers.clone());
        let z = tape.param(Tensor::new(1, 2, vec![1.0, 1.0]).unwrap());
        let l = center_margin_loss(&mut tape, z, &[0], &[1], &c, cv, 1.0).unwrap();
        assert_eq!(tape.scalar(l).unwrap(), 0.0);

        // coincident centres: the margin is always active
        let c = centers_2d();
        let mut tape = Tape::new();
        let cv = tape.param(c.centers.clone());
        let z = tape.param(Tensor::zeros(1, 2));
        let l = center_margin_loss(&mut tape, z, &[0], &[1], &c, cv, 1.0).unwrap();
        assert_eq!(tape.scalar(l).unwrap(), 1.0);
    }

    #[test]
    fn center_loss_gradient_wrt_z() {
        // d/dz [Δ + ||z-a||² - ||z-b||²] = 2(b - a) when active
        let mut c = centers_2d();
        c.centers = Tensor::new(2, 2, vec![0.5, -0.25, 0.6, -0.1]).unwrap();
        let mut tape = Tape::new();
        let cv = tape.param(c.centers.clone());
        let z = tape.param(Tensor::new(1, 2, vec![0.4, -0.2]).unwrap());
        let l = center_margin_loss(&mut tape, z, &[0], &[1], &c, cv, 1.0).unwrap();
        assert!(tape.scalar(l).unwrap() > 0.0);
        let g = tape.backward(l).unwrap().get(z);
        assert!((g.data()[0] - 2.0 * (0.6 - 0.5)).abs() < 1e-12);
        assert!((g.data()[1] - 2.0 * (-0.1 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn center_loss_rejects_equal_negative() {
        let c = centers_2d();
        let mut tape = Tape::new();
        let cv = tape.param(c.centers.clone());
        let z = tape.param(Tensor::zeros(1, 2));
        assert!(matches!(
            center_margin_loss(&mut tape, z, &[1], &[1], &c, cv, 1.0),
            Err(Error::Contract(_))
        ));
    }

    fn constant_critic() -> CriticParams<f64> {
        // zero weights: D(z) = output bias (0) for every z
        CriticParams {
            hidden: Linear::zeros(3, 4),
            output: Linear::zeros(4, 1),
        }
    }

    #[test]
    fn adversarial_constant_critic_values() {
        let mut rng = crate::rng_from_seed(3);
        let critic = constant_critic();
        let mut tape = Tape::new();
        let d = critic.bind(&mut tape, true);
        let zr = tape.constant(Tensor::standard_normal(5, 3, &mut rng));
        let zf = tape.constant(Tensor::standard_normal(5, 3, &mut rng));
        let w = adversarial_losses(&mut tape, &d, zr, zf, AdversarialMode::WganClip).unwrap();
        assert_eq!(tape.scalar(w.critic).unwrap(), 0.0);
        let mm = adversarial_losses(&mut tape, &d, zr, zf, AdversarialMode::Minimax).unwrap();
        // value log(0.5) + log(0.5) = -2 ln 2, and the critic minimizes its negation
        assert!((tape.scalar(mm.critic).unwrap() - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn identical_batches_give_zero_wgan_critic_loss() {
        let mut rng = crate::rng_from_seed(4);
        let critic = CriticParams::<f64>::init(3, 6, &mut rng);
        let z = Tensor::standard_normal(7, 3, &mut rng);
        let mut tape = Tape::new();
        let d = critic.bind(&mut tape, true);
        let zr = tape.constant(z.clone());
        let zf = tape.constant(z);
        let w = adversarial_losses(&mut tape, &d, zr, zf, AdversarialMode::WganClip).unwrap();
        assert_eq!(tape.scalar(w.critic).unwrap(), 0.0);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("minimax".parse::<AdversarialMode>().unwrap(), AdversarialMode::Minimax);
        assert_eq!("wgan-clip".parse::<AdversarialMode>().unwrap(), AdversarialMode::WganClip);
        assert!(matches!("hinge".parse::<AdversarialMode>(), Err(Error::Config(_))));
    }

    #[test]
    fn cls_loss_examples() {
        let q = SoftmaxClassifier::<f64>::zeros(3, &[2, 5, 9]).unwrap();
        let mut rng = crate::rng_from_seed(5);
        let x = Tensor::standard_normal(4, 3, &mut rng);
        let mut tape = Tape::new();
        let qv = q.bind(&mut tape, false);
        let xv = tape.param(x);
        let l = cls_loss(&mut tape, &q, qv, xv, &[2, 5, 9, 2]).unwrap();
        assert!((tape.scalar(l).unwrap() - libm::log(3.0)).abs() < 1e-12);
        assert!(matches!(
            cls_loss(&mut tape, &q, qv, xv, &[2, 5, 9, 3]),
            Err(Error::Contract(_))
        ));
        // q(y|x̃) = 1 in the limit of a dominant logit
        let mut sharp = q.clone();
        sharp.layer.bias = Tensor::new(1, 3, vec![0.0, 800.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let sv = sharp.bind(&mut tape, false);
        let xv = tape.constant(Tensor::zeros(4, 3));
        let l = cls_loss(&mut tape, &sharp, sv, xv, &[5; 4]).unwrap();
        assert_eq!(tape.scalar(l).unwrap(), 0.0);
    }

    #[test]
    fn synthesize_counts_labels_and_width() {
        let mut rng = crate::rng_from_seed(6);
        let g = GeneratorParams::<f32>::init(3, 3, 8, 6, &mut rng);
        let m = MapperParams::<f32>::init(6, 5, 4, &mut rng);
        let attrs = Tensor::standard_normal(8, 3, &mut rng);
        let out = synthesize_unseen(&g, &m, &attrs, &[1, 3, 4, 6, 7], 400, 9, false).unwrap();
        assert_eq!(out.len(), 2000);
        assert_eq!(out.features.cols(), 4);
        for (i, &c) in [1, 3, 4, 6, 7].iter().enumerate() {
            assert!(out.labels[i * 400..(i + 1) * 400].iter().all(|&l| l == c));
        }
        assert!(synthesize_unseen(&g, &m, &attrs, &[8], 3, 9, false).is_err());
        // per-class streams are independent of the requested set
        let alone = synthesize_unseen(&g, &m, &attrs, &[4], 400, 9, false).unwrap();
        assert_eq!(alone.features, out.features.select_rows(&(800..1200).collect::<Vec<_>>()).unwrap());
    }
}
