//! Central-difference verification of tape gradients.

use alloc::vec::Vec;

use rand::RngExt;

use crate::classifier::SoftmaxClassifier;
use crate::embed::sje_hinge;
use crate::error::Result;
use crate::gen::{
    adversarial_losses, center_margin_loss, cls_loss, AdversarialMode, BoundCritic, BoundGenerator,
    ClassCenters, CriticParams, GeneratorParams,
};
use crate::mapper::{kl_term, reparameterize, BoundMapper, MapperParams, PosteriorVars};
use crate::nn::{Linear, LinearVars, Parameters};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Smallest denominator in the relative error.
const FLOOR: f64 = 1e-8;

/// Denominator floors are `NOISE_SCALE` times the rounding level of the quantity compared.
pub const NOISE_SCALE: f64 = 1e3;

/// Parameter entries whose ±`KINK_RADIUS`·h neighbourhood crosses a kink are skipped.
pub const KINK_RADIUS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - cd| / max(|analytic|, |cd|, floor)` over checked entries.
    pub max_rel_error: f64,
    /// Denominator floor used for this check.
    pub floor: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub excluded: usize,
}

fn evaluate<T: Real, F>(loss_fn: &mut F, params: &[Tensor<T>]) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    Ok((tape.scalar(loss)?, tape.kink_inputs()))
}

fn crosses_kink(base: &[f64], probe: &[f64]) -> bool {
    base.len() != probe.len()
        || base
            .iter()
            .zip(probe)
            .any(|(a, b)| (*a > 0.0) != (*b > 0.0) || (*a == 0.0) != (*b == 0.0))
}

/// Compares the tape gradient of `loss_fn` against central differences with step `h`.
///
/// `loss_fn` must be deterministic: any noise it uses has to be captured, not resampled.
pub fn gradient_check<T: Real, F>(mut loss_fn: F, params: &[Tensor<T>], h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let base_loss = tape.scalar(loss)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<T>> = grads.collect(&vars);
    let eps = T::epsilon().as_f64();
    let floor = (NOISE_SCALE * eps * base_loss.abs().max(1.0) / h).max(FLOOR);
    let base_kinks = tape.kink_inputs();
    drop(tape);

    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        floor,
        worst: None,
        checked: 0,
        excluded: 0,
    };

    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let original = params[pi].data()[ei];
            let x = original.as_f64();

            let mut near_kink = false;
            for dir in [-1.0, 1.0] {
                work[pi].data_mut()[ei] = T::from_f64(x + dir * KINK_RADIUS * h);
                let (_, kinks) = evaluate(&mut loss_fn, &work)?;
                if crosses_kink(&base_kinks, &kinks) {
                    near_kink = true;
                }
            }
            if near_kink {
                work[pi].data_mut()[ei] = original;
                report.excluded += 1;
                continue;
            }

            let plus = T::from_f64(x + h);
            let minus = T::from_f64(x - h);
            let step = plus.as_f64() - minus.as_f64();
            work[pi].data_mut()[ei] = plus;
            let (lp, _) = evaluate(&mut loss_fn, &work)?;
            work[pi].data_mut()[ei] = minus;
            let (lm, _) = evaluate(&mut loss_fn, &work)?;
            work[pi].data_mut()[ei] = original;

            let cd = (lp - lm) / step;
            let a = analytic[pi].data()[ei].as_f64();
            let denom = a.abs().max(cd.abs()).max(floor);
            let rel = (a - cd).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((pi, ei));
            }
        }
    }
    Ok(report)
}

/// A loss that can be built on a tape of either precision.
pub trait Objective {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, params: &[Var]) -> Result<Var>;
}

/// Analytic gradients in storage type `T` against `f64` central differences.
///
/// The denominator floor is `NOISE_SCALE · max(1, |L|) · max(ε_T, ε_64 / h)`, the
/// rounding level of the analytic pass or of the reference; kinks are located on the
/// `f64` loss.
pub fn gradient_check_mixed<T: Real, O: Objective>(
    objective: &O,
    params: &[Tensor<f64>],
    h: f64,
) -> Result<GradCheckReport> {
    gradient_check_mixed_with::<T, O>(objective, params, h, |loss| {
        let scale = NOISE_SCALE * loss.abs().max(1.0);
        (scale * T::epsilon().as_f64())
            .max(scale * f64::EPSILON / h)
            .max(FLOOR)
    })
}

/// [`gradient_check_mixed`] with the denominator floor computed by `floor` from the loss value.
pub fn gradient_check_mixed_with<T: Real, O: Objective>(
    objective: &O,
    params: &[Tensor<f64>],
    h: f64,
    floor: impl FnOnce(f64) -> f64,
) -> Result<GradCheckReport> {
    let stored: Vec<Tensor<T>> = params.iter().map(|p| p.cast()).collect();
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = stored.iter().map(|p| tape.param(p.clone())).collect();
    let loss = objective.eval(&mut tape, &vars)?;
    let base_loss = tape.scalar(loss)?;
    let analytic = tape.backward(loss)?.collect(&vars);
    drop(tape);

    // the reference sees exactly the stored values
    let reference: Vec<Tensor<f64>> = stored.iter().map(|p| p.cast()).collect();
    let mut f = |tape: &mut Tape<f64>, v: &[Var]| objective.eval(tape, v);
    let (_, base_kinks) = evaluate(&mut f, &reference)?;
    let floor = floor(base_loss).max(FLOOR);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        floor,
        worst: None,
        checked: 0,
        excluded: 0,
    };
    let mut work = reference.clone();
    for pi in 0..work.len() {
        for ei in 0..work[pi].len() {
            let x = reference[pi].data()[ei];
            let mut near_kink = false;
            for dir in [-1.0, 1.0] {
                work[pi].data_mut()[ei] = x + dir * KINK_RADIUS * h;
                let (_, kinks) = evaluate(&mut f, &work)?;
                near_kink |= crosses_kink(&base_kinks, &kinks);
            }
            if near_kink {
                work[pi].data_mut()[ei] = x;
                report.excluded += 1;
                continue;
            }
            work[pi].data_mut()[ei] = x + h;
            let (lp, _) = evaluate(&mut f, &work)?;
            work[pi].data_mut()[ei] = x - h;
            let (lm, _) = evaluate(&mut f, &work)?;
            work[pi].data_mut()[ei] = x;
            let cd = (lp - lm) / (2.0 * h);
            let a = analytic[pi].data()[ei].as_f64();
            let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((pi, ei));
            }
        }
    }
    Ok(report)
}

/// Step used by [`loss_suite`] for the `f64` reference differences.
pub const SUITE_STEP: f64 = 1e-5;

/// The losses covered by [`loss_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteLoss {
    EmbeddingHinge,
    Classification,
    Kl,
    CenterMargin,
    Adversarial { mode: AdversarialMode, critic: bool },
    GenerationObjective,
}

impl SuiteLoss {
    pub const ALL: [SuiteLoss; 9] = [
        SuiteLoss::EmbeddingHinge,
        SuiteLoss::Classification,
        SuiteLoss::Kl,
        SuiteLoss::CenterMargin,
        SuiteLoss::Adversarial { mode: AdversarialMode::Minimax, critic: true },
        SuiteLoss::Adversarial { mode: AdversarialMode::Minimax, critic: false },
        SuiteLoss::Adversarial { mode: AdversarialMode::WganClip, critic: true },
        SuiteLoss::Adversarial { mode: AdversarialMode::WganClip, critic: false },
        SuiteLoss::GenerationObjective,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SuiteLoss::EmbeddingHinge => "embedding hinge",
            SuiteLoss::Classification => "classification",
            SuiteLoss::Kl => "kl",
            SuiteLoss::CenterMargin => "center margin",
            SuiteLoss::Adversarial { mode: AdversarialMode::Minimax, critic: true } => "minimax critic",
            SuiteLoss::Adversarial { mode: AdversarialMode::Minimax, critic: false } => "minimax generator",
            SuiteLoss::Adversarial { mode: AdversarialMode::WganClip, critic: true } => "wgan critic",
            SuiteLoss::Adversarial { mode: AdversarialMode::WganClip, critic: false } => "wgan generator",
            SuiteLoss::GenerationObjective => "generation objective",
        }
    }
}

fn lin(v: &[Var]) -> LinearVars {
    LinearVars {
        weight: v[0],
        bias: v[1],
    }
}

fn bound_mapper(v: &[Var]) -> BoundMapper {
    BoundMapper {
        hidden: lin(&v[0..2]),
        mu_head: lin(&v[2..4]),
        log_var_head: lin(&v[4..6]),
    }
}

const N: usize = 6;
const D_X: usize = 5;
const D_Z: usize = 3;
const D_A: usize = 3;
const D_EPS: usize = 2;
const CLASSES: usize = 4;

/// A small random instance of every loss; all noise is drawn up front.
#[derive(Debug, Clone)]
pub struct SuiteFixture {
    mapper: Vec<Tensor<f64>>,
    generator: Vec<Tensor<f64>>,
    critic: Vec<Tensor<f64>>,
    centers: Tensor<f64>,
    q: Linear<f64>,
    x: Tensor<f64>,
    gen_input: Tensor<f64>,
    eps_real: Tensor<f64>,
    eps_fake: Tensor<f64>,
    attributes: Tensor<f64>,
    labels: Vec<usize>,
    negatives: Vec<usize>,
}

impl SuiteFixture {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = crate::rng_from_seed(seed);
        let mapper = MapperParams::<f64>::init(D_X, 6, D_Z, &mut rng);
        let generator = GeneratorParams::<f64>::init(D_A, D_EPS, 6, D_X, &mut rng);
        let critic = CriticParams::<f64>::init(D_Z, 5, &mut rng);
        let q = Linear::init(D_X, CLASSES, &mut rng);
        let labels: Vec<usize> = (0..N).map(|_| rng.random_range(0..CLASSES)).collect();
        let negatives = labels
            .iter()
            .map(|&y| (y + 1 + rng.random_range(0..CLASSES - 1)) % CLASSES)
            .collect();
        let attributes = Tensor::standard_normal(CLASSES, D_A, &mut rng);
        let noise = Tensor::standard_normal(N, D_EPS, &mut rng);
        Ok(Self {
            mapper: mapper.tensors().into_iter().cloned().collect(),
            generator: generator.tensors().into_iter().cloned().collect(),
            critic: critic.tensors().into_iter().cloned().collect(),
            centers: Tensor::standard_normal(CLASSES, D_Z, &mut rng),
            q,
            x: Tensor::standard_normal(N, D_X, &mut rng),
            gen_input: attributes.select_rows(&labels)?.concat_cols(&noise)?,
            eps_real: Tensor::standard_normal(N, D_Z, &mut rng),
            eps_fake: Tensor::standard_normal(N, D_Z, &mut rng),
            attributes,
            labels,
            negatives,
        })
    }

    /// Parameters checked for `loss`, in the order the loss binds them.
    pub fn params(&self, loss: SuiteLoss) -> Vec<Tensor<f64>> {
        match loss {
            SuiteLoss::EmbeddingHinge | SuiteLoss::Kl => self.mapper.clone(),
            SuiteLoss::Classification => self.generator.clone(),
            SuiteLoss::CenterMargin => {
                let mut p = self.mapper.clone();
                p.push(self.centers.clone());
                p
            }
            SuiteLoss::Adversarial { .. } | SuiteLoss::GenerationObjective => {
                // critic [0..4], mapper [4..10], generator [10..14], centres [14]
                let mut p = self.critic.clone();
                p.extend(self.mapper.iter().cloned());
                p.extend(self.generator.iter().cloned());
                if loss == SuiteLoss::GenerationObjective {
                    p.push(self.centers.clone());
                }
                p
            }
        }
    }

    fn centers(&self) -> ClassCenters<f64> {
        ClassCenters {
            classes: (0..CLASSES).collect(),
            centers: self.centers.clone(),
        }
    }
}

struct Bound<'a> {
    fixture: &'a SuiteFixture,
    loss: SuiteLoss,
}

fn posterior_z<T: Real>(
    tape: &mut Tape<T>,
    mapper: &[Var],
    x: Var,
    eps: &Tensor<f64>,
) -> Result<(PosteriorVars, Var)> {
    let post = bound_mapper(mapper).posterior(tape, x)?;
    let e = tape.constant(eps.cast());
    Ok((post, reparameterize(tape, post, e)?))
}

fn generated<T: Real>(tape: &mut Tape<T>, g: &[Var], input: &Tensor<f64>) -> Result<Var> {
    let gen = BoundGenerator {
        hidden: lin(&g[0..2]),
        output: lin(&g[2..4]),
    };
    let input = tape.constant(input.cast());
    gen.forward(tape, input)
}

impl Objective for Bound<'_> {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let f = self.fixture;
        let attributes: Tensor<T> = f.attributes.cast();
        let q = SoftmaxClassifier::<T> {
            layer: Linear {
                weight: f.q.weight.cast(),
                bias: f.q.bias.cast(),
            },
            classes: (0..CLASSES).collect(),
        };
        let centers = f.centers();
        let centers = ClassCenters::<T> {
            classes: centers.classes,
            centers: centers.centers.cast(),
        };
        match self.loss {
            SuiteLoss::EmbeddingHinge => {
                let x = tape.constant(f.x.cast());
                let (_, z) = posterior_z(tape, v, x, &f.eps_real)?;
                sje_hinge(tape, z, &attributes, &f.labels, &f.negatives, 1.0)
            }
            SuiteLoss::Classification => {
                let x = generated(tape, v, &f.gen_input)?;
                let qv = q.bind(tape, false);
                cls_loss(tape, &q, qv, x, &f.labels)
            }
            SuiteLoss::Kl => {
                let x = tape.constant(f.x.cast());
                let (post, _) = posterior_z(tape, v, x, &f.eps_real)?;
                kl_term(tape, post)
            }
            SuiteLoss::CenterMargin => {
                let x = tape.constant(f.x.cast());
                let (_, z) = posterior_z(tape, &v[..6], x, &f.eps_real)?;
                center_margin_loss(tape, z, &f.labels, &f.negatives, &centers, v[6], 1.0)
            }
            SuiteLoss::Adversarial { mode, critic } => {
                let d = BoundCritic {
                    hidden: lin(&v[0..2]),
                    output: lin(&v[2..4]),
                };
                let x = tape.constant(f.x.cast());
                let (_, zr) = posterior_z(tape, &v[4..10], x, &f.eps_real)?;
                let xf = generated(tape, &v[10..14], &f.gen_input)?;
                let (_, zf) = posterior_z(tape, &v[4..10], xf, &f.eps_fake)?;
                let l = adversarial_losses(tape, &d, zr, zf, mode)?;
                Ok(if critic { l.critic } else { l.generator })
            }
            SuiteLoss::GenerationObjective => {
                let d = BoundCritic {
                    hidden: lin(&v[0..2]),
                    output: lin(&v[2..4]),
                };
                let x = tape.constant(f.x.cast());
                let (post_r, zr) = posterior_z(tape, &v[4..10], x, &f.eps_real)?;
                let xf = generated(tape, &v[10..14], &f.gen_input)?;
                let (post_f, zf) = posterior_z(tape, &v[4..10], xf, &f.eps_fake)?;
                let adv = adversarial_losses(tape, &d, zr, zf, AdversarialMode::WganClip)?;
                let c = center_margin_loss(tape, zr, &f.labels, &f.negatives, &centers, v[14], 1.0)?;
                let qv = q.bind(tape, false);
                let cls = cls_loss(tape, &q, qv, xf, &f.labels)?;
                let kr = kl_term(tape, post_r)?;
                let kf = kl_term(tape, post_f)?;
                let mut total = adv.generator;
                for (term, w) in [(c, 0.1), (cls, 0.5), (kr, 0.7), (kf, 0.3)] {
                    let t = tape.scale(term, w)?;
                    total = tape.add(total, t)?;
                }
                Ok(total)
            }
        }
    }
}

/// Gradient checks of every training loss on the instance drawn from `seed`,
/// with analytic gradients computed in storage type `T`.
pub fn loss_suite<T: Real>(seed: u64) -> Result<Vec<(SuiteLoss, GradCheckReport)>> {
    loss_suite_with_step::<T>(seed, SUITE_STEP)
}

/// The suite in `f64` with step `h` and floor `relative_floor · max(1, |L|)`.
pub fn loss_suite_f64(seed: u64, h: f64, relative_floor: f64) -> Result<Vec<(SuiteLoss, GradCheckReport)>> {
    let fixture = SuiteFixture::new(seed)?;
    SuiteLoss::ALL
        .iter()
        .map(|&loss| {
            let objective = Bound {
                fixture: &fixture,
                loss,
            };
            let report = gradient_check_mixed_with::<f64, _>(&objective, &fixture.params(loss), h, |l| {
                relative_floor * l.abs().max(1.0)
            })?;
            Ok((loss, report))
        })
        .collect()
}

/// [`loss_suite`] with an explicit difference step.
pub fn loss_suite_with_step<T: Real>(seed: u64, h: f64) -> Result<Vec<(SuiteLoss, GradCheckReport)>> {
    let fixture = SuiteFixture::new(seed)?;
    SuiteLoss::ALL
        .iter()
        .map(|&loss| {
            let objective = Bound {
                fixture: &fixture,
                loss,
            };
            let report = gradient_check_mixed::<T, _>(&objective, &fixture.params(loss), h)?;
            Ok((loss, report))
        })
        .collect()
}
