//! Multinomial logistic regression over an explicit list of class ids.

use alloc::format;
use alloc::vec::Vec;

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::{Linear, LinearVars, Parameters};
use crate::optim::{AdamConfig, AdamState};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// `logits = x · W + b`, one column per entry of `classes` (ascending global ids).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier<T = f32> {
    pub layer: Linear<T>,
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftmaxConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-2,
        }
    }
}

impl<T: Real> SoftmaxClassifier<T> {
    pub fn zeros(input_dim: usize, classes: &[usize]) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Contract("classifier needs at least one class".into()));
        }
        let mut sorted = classes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != classes.len() {
            return Err(Error::Contract("duplicate class id".into()));
        }
        Ok(Self {
            layer: Linear::zeros(input_dim, sorted.len()),
            classes: sorted,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer.fan_in()
    }

    pub fn local_index(&self, class: usize) -> Option<usize> {
        self.classes.binary_search(&class).ok()
    }

    /// Maps global labels to column indices.
    pub fn local_targets(&self, labels: &[usize]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|&y| {
                self.local_index(y).ok_or_else(|| {
                    Error::Contract(format!("class {y} is not one of the classifier's classes"))
                })
            })
            .collect()
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(
                "classifier",
                format!("input has {} columns, expected {}", x.cols(), self.input_dim()),
            ));
        }
        self.layer.apply(x)
    }

    /// Most likely global class per row; ties go to the smallest class id.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self
            .logits(x)?
            .argmax_rows()
            .into_iter()
            .map(|k| self.classes[k])
            .collect())
    }

    /// Mean negative log-likelihood of `labels`.
    pub fn loss(&self, x: &Tensor<T>, labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let l = self.loss_on_tape(&mut tape, vars, xv, labels)?;
        tape.scalar(l)
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> LinearVars {
        self.layer.bind(tape, trainable)
    }

    pub fn loss_on_tape(
        &self,
        tape: &mut Tape<T>,
        vars: LinearVars,
        x: Var,
        labels: &[usize],
    ) -> Result<Var> {
        let targets = self.local_targets(labels)?;
        let logits = vars.forward(tape, x)?;
        tape.softmax_cross_entropy(logits, &targets)
    }

    /// Full-batch Adam from zero weights; returns the model and its loss per epoch.
    pub fn train(set: &LabeledSet<T>, classes: &[usize], config: SoftmaxConfig) -> Result<(Self, Vec<f64>)> {
        let mut model = Self::zeros(set.features.cols(), classes)?;
        let missing: Vec<usize> = model
            .classes
            .iter()
            .copied()
            .filter(|c| !set.labels.contains(c))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!("no training rows for classes {missing:?}")));
        }
        let targets = model.local_targets(&set.labels)?;
        let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate), &model.layer.tensors());
        let mut history = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let xv = tape.constant(set.features.clone());
            let logits = vars.forward(&mut tape, xv)?;
            let loss = tape.softmax_cross_entropy(logits, &targets)?;
            history.push(tape.scalar(loss)?);
            let grads = tape.backward(loss)?.collect(&vars.vars());
            adam.step(&mut model.layer.tensors_mut(), &grads)
                .map_err(|e| Error::Training {
                    step: epoch as u64,
                    detail: format!("{e}"),
                })?;
        }
        Ok((model, history))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn separable() -> LabeledSet<f32> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let t = i as f32 / 10.0;
            rows.push(vec![1.0 + t, 0.5 - t]);
            labels.push(3);
            rows.push(vec![-1.0 - t, 0.2 + t]);
            labels.push(7);
        }
        LabeledSet {
            features: Tensor::from_rows(&rows).unwrap(),
            labels,
        }
    }

    #[test]
    fn zero_init_loss_is_log_classes() {
        let set = separable();
        let m = SoftmaxClassifier::<f32>::zeros(2, &[3, 7, 9]).unwrap();
        let l = m.loss(&set.features, &set.labels).unwrap();
        assert!((l - libm::log(3.0)).abs() < 1e-6);
    }

    #[test]
    fn separable_fixture_is_fit_perfectly() {
        let set = separable();
        let (m, hist) = SoftmaxClassifier::train(&set, &[3, 7], SoftmaxConfig::default()).unwrap();
        assert!(hist.last().unwrap() < &hist[0]);
        assert_eq!(m.predict(&set.features).unwrap(), set.labels);
    }

    #[test]
    fn missing_class_is_an_error() {
        let set = separable();
        let err = SoftmaxClassifier::train(&set, &[3, 7, 8], SoftmaxConfig::default()).unwrap_err();
        assert!(format!("{err}").contains("[8]"));
    }

    #[test]
    fn unknown_label_is_a_contract_error() {
        let m = SoftmaxClassifier::<f32>::zeros(2, &[3, 7]).unwrap();
        assert!(matches!(m.local_targets(&[4]), Err(Error::Contract(_))));
    }
}
