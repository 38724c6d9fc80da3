//! GZSL evaluation: per-class top-1 accuracy on seen (S) and unseen (U) test
//! classes and their harmonic mean (H). Every prediction is made over the
//! full class set.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::classifier::{SoftmaxClassifier, SoftmaxConfig};
use crate::data::{DatasetBundle, LabeledSet};
use crate::embed::predict_embed;
use crate::error::{Error, Result};
use crate::mapper::{map_point, MapperParams};

/// Percentages in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GzslMetrics {
    pub unseen: f64,
    pub seen: f64,
    pub harmonic: f64,
}

impl GzslMetrics {
    pub fn new(unseen: f64, seen: f64) -> Self {
        Self {
            unseen,
            seen,
            harmonic: harmonic_mean(unseen, seen),
        }
    }
}

/// `2·S·U / (S + U)`, and 0 when either accuracy is 0.
pub fn harmonic_mean(unseen: f64, seen: f64) -> f64 {
    if unseen <= 0.0 || seen <= 0.0 {
        return 0.0;
    }
    2.0 * seen * unseen / (seen + unseen)
}

/// Mean over `classes` of the within-class hit rate, in percent.
pub fn per_class_top1(predictions: &[usize], labels: &[usize], classes: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dim(
            "per_class_top1",
            format!("{} predictions for {} labels", predictions.len(), labels.len()),
        ));
    }
    if classes.is_empty() {
        return Err(Error::Contract("per_class_top1 needs a nonempty class set".into()));
    }
    let mut tally: BTreeMap<usize, (u64, u64)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &y) in predictions.iter().zip(labels) {
        if let Some((hits, total)) = tally.get_mut(&y) {
            *total += 1;
            if p == y {
                *hits += 1;
            }
        }
    }
    let mut acc = 0.0;
    for (class, (hits, total)) in &tally {
        if *total == 0 {
            return Err(Error::Data(format!("class {class} has no test examples")));
        }
        acc += *hits as f64 / *total as f64;
    }
    Ok(100.0 * acc / tally.len() as f64)
}

/// U, S and H from saved predictions.
pub fn metrics_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    seen: &[usize],
    unseen: &[usize],
) -> Result<GzslMetrics> {
    let u = per_class_top1(predictions, labels, unseen)?;
    let s = per_class_top1(predictions, labels, seen)?;
    Ok(GzslMetrics::new(u, s))
}

/// How test features are turned into class predictions.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    /// Softmax over posterior-mean features.
    Generation {
        mapper: &'a MapperParams<f32>,
        classifier: &'a SoftmaxClassifier<f32>,
    },
    /// Nearest descriptor by dot product in the embedding space.
    Embedding { mapper: &'a MapperParams<f32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: GzslMetrics,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Predicts every test example of `bundle` over all classes and scores U, S, H.
pub fn evaluate(bundle: &DatasetBundle, predictor: Predictor<'_>) -> Result<Evaluation> {
    let test = bundle.test_set();
    let all = bundle.all_classes();
    let predictions = match predictor {
        Predictor::Generation { mapper, classifier } => {
            if classifier.classes != all {
                return Err(Error::Contract(
                    "final classifier must cover every seen and unseen class".into(),
                ));
            }
            let z = map_point(mapper, &test.features)?;
            classifier.predict(&z)?
        }
        Predictor::Embedding { mapper } => {
            predict_embed(mapper, &test.features, &bundle.attributes, &all)?
        }
    };
    let metrics = metrics_from_predictions(
        &predictions,
        &test.labels,
        &bundle.seen_classes,
        &bundle.unseen_classes,
    )?;
    Ok(Evaluation {
        metrics,
        predictions,
        labels: test.labels,
    })
}

/// Softmax over mixed real-seen and synthetic-unseen features; every class needs a row.
pub fn train_final_softmax(
    real_seen: &LabeledSet<f32>,
    synthetic_unseen: &LabeledSet<f32>,
    classes: &[usize],
    config: SoftmaxConfig,
) -> Result<SoftmaxClassifier<f32>> {
    let missing: Vec<usize> = classes
        .iter()
        .copied()
        .filter(|c| !real_seen.labels.contains(c) && !synthetic_unseen.labels.contains(c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "final classifier has no training rows for classes {missing:?}"
        )));
    }
    let mixed = real_seen.concat(synthetic_unseen)?;
    let (model, _) = SoftmaxClassifier::train(&mixed, classes, config)?;
    Ok(model)
}
