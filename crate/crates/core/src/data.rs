//! Dataset bundle, GZSL splits and the synthetic benchmark.
//!
//! The synthetic generator plants two blocks in every visual feature:
//!
//! ```text
//! x = [ S·a_y + σ·n₁  |  m_{b(i)} + σ·n₂ ]
//!       signal (d_sig)    redundancy (d_red)
//! ```
//!
//! `S` is a fixed random map from attribute space, so the signal block of an
//! unseen class is predictable from its descriptor. `b(i)` picks one of `B`
//! background clusters per example; the clusters are shared by every class, so
//! the redundancy block carries no label information.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngExt;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Features, labels, class descriptors and the seen/unseen, train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub features: Tensor<f32>,
    pub labels: Vec<usize>,
    pub attributes: Tensor<f32>,
    pub seen_classes: Vec<usize>,
    pub unseen_classes: Vec<usize>,
    pub train_index: Vec<usize>,
    pub test_index: Vec<usize>,
}

/// Rows of one partition: features with their global class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet<T = f32> {
    pub features: Tensor<T>,
    pub labels: Vec<usize>,
}

impl DatasetBundle {
    /// Builds and validates a bundle.
    pub fn new(
        features: Tensor<f32>,
        labels: Vec<usize>,
        attributes: Tensor<f32>,
        seen_classes: Vec<usize>,
        unseen_classes: Vec<usize>,
        train_index: Vec<usize>,
        test_index: Vec<usize>,
    ) -> Result<Self> {
        let bundle = Self {
            features,
            labels,
            attributes,
            seen_classes,
            unseen_classes,
            train_index,
            test_index,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn num_classes(&self) -> usize {
        self.attributes.rows()
    }

    pub fn num_examples(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn attribute_dim(&self) -> usize {
        self.attributes.cols()
    }

    /// Seen and unseen classes, ascending.
    pub fn all_classes(&self) -> Vec<usize> {
        (0..self.num_classes()).collect()
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.seen_classes.binary_search(&class).is_ok()
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        let c = self.attributes.rows();
        if self.features.rows() != n {
            return Err(Error::Data(format!(
                "{} feature rows but {n} labels",
                self.features.rows()
            )));
        }
        if !self.features.is_finite() || !self.attributes.is_finite() {
            return Err(Error::Data("non-finite feature or attribute value".into()));
        }
        if let Some((row, &y)) = self.labels.iter().enumerate().find(|(_, &y)| y >= c) {
            return Err(Error::Data(format!(
                "label out of range: row {row} has class {y}, only {c} classes"
            )));
        }

        let seen: BTreeSet<usize> = self.seen_classes.iter().copied().collect();
        let unseen: BTreeSet<usize> = self.unseen_classes.iter().copied().collect();
        if seen.len() != self.seen_classes.len() || unseen.len() != self.unseen_classes.len() {
            return Err(Error::Data("duplicate class id in split".into()));
        }
        if let Some(k) = seen.intersection(&unseen).next() {
            return Err(Error::Data(format!("split overlap: class {k} is both seen and unseen")));
        }
        if let Some(&k) = seen.union(&unseen).find(|&&k| k >= c) {
            return Err(Error::Data(format!("label out of range: split class {k}")));
        }
        if seen.len() + unseen.len() != c {
            let missing: Vec<usize> = (0..c)
                .filter(|k| !seen.contains(k) && !unseen.contains(k))
                .collect();
            return Err(Error::Data(format!(
                "classes {missing:?} are neither seen nor unseen"
            )));
        }
        if !self.seen_classes.windows(2).all(|w| w[0] < w[1])
            || !self.unseen_classes.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::Data("class lists must be ascending".into()));
        }

        let train: BTreeSet<usize> = self.train_index.iter().copied().collect();
        let test: BTreeSet<usize> = self.test_index.iter().copied().collect();
        if train.len() != self.train_index.len() || test.len() != self.test_index.len() {
            return Err(Error::Data("duplicate example index in split".into()));
        }
        if let Some(i) = train.intersection(&test).next() {
            return Err(Error::Data(format!(
                "split overlap: example {i} is in both train and test"
            )));
        }
        if let Some(&i) = train.union(&test).find(|&&i| i >= n) {
            return Err(Error::Data(format!("example index {i} out of range ({n} examples)")));
        }
        if let Some(&i) = self.train_index.iter().find(|&&i| !seen.contains(&self.labels[i])) {
            return Err(Error::Data(format!(
                "train example {i} has unseen class {}",
                self.labels[i]
            )));
        }
        let test_seen = self.test_index.iter().any(|&i| seen.contains(&self.labels[i]));
        let test_unseen = self.test_index.iter().any(|&i| unseen.contains(&self.labels[i]));
        if !(test_seen && test_unseen) {
            return Err(Error::Data(
                "test split must contain both seen and unseen examples".into(),
            ));
        }
        Ok(())
    }

    fn subset(&self, index: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self
                .features
                .select_rows(index)
                .expect("indices validated"),
            labels: index.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn train_set(&self) -> LabeledSet {
        self.subset(&self.train_index)
    }

    pub fn test_set(&self) -> LabeledSet {
        self.subset(&self.test_index)
    }

    /// Descriptor rows for the given classes.
    pub fn class_attributes(&self, classes: &[usize]) -> Result<Tensor<f32>> {
        self.attributes.select_rows(classes)
    }
}

impl<T: Real> LabeledSet<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Concatenates two sets with the same feature width.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            features: self.features.concat_rows(&other.features)?,
            labels,
        })
    }
}

/// Parameters of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seen_classes: usize,
    pub unseen_classes: usize,
    pub examples_per_class: usize,
    pub signal_dim: usize,
    pub redundancy_dim: usize,
    pub attribute_dim: usize,
    pub background_clusters: usize,
    pub noise_scale: f64,
    /// Standard deviation of the background cluster centres.
    pub background_scale: f64,
    /// Fraction of every seen class used for training.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seen_classes: 10,
            unseen_classes: 5,
            examples_per_class: 100,
            signal_dim: 16,
            redundancy_dim: 112,
            attribute_dim: 8,
            background_clusters: 4,
            noise_scale: 0.5,
            background_scale: 2.0,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn feature_dim(&self) -> usize {
        self.signal_dim + self.redundancy_dim
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("seen_classes", self.seen_classes),
            ("examples_per_class", self.examples_per_class),
            ("signal_dim", self.signal_dim),
            ("redundancy_dim", self.redundancy_dim),
            ("attribute_dim", self.attribute_dim),
            ("background_clusters", self.background_clusters),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.unseen_classes < 2 {
            return Err(Error::Config("unseen_classes must be at least 2".into()));
        }
        if self.examples_per_class < 2 {
            return Err(Error::Config(
                "examples_per_class must be at least 2 to split seen classes".into(),
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("noise_scale must be finite and >= 0".into()));
        }
        if !(self.background_scale >= 0.0 && self.background_scale.is_finite()) {
            return Err(Error::Config("background_scale must be finite and >= 0".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Synthetic bundle plus the ground truth that generated it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub bundle: DatasetBundle,
    /// Background cluster id of every example.
    pub clusters: Vec<usize>,
}

/// Generates a split synthetic bundle; deterministic in `spec`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = crate::rng_from_seed(spec.seed);
    let c = spec.seen_classes + spec.unseen_classes;
    let (d_sig, d_red, d_a) = (spec.signal_dim, spec.redundancy_dim, spec.attribute_dim);
    let b = spec.background_clusters;

    let attributes = Tensor::<f64>::standard_normal(c, d_a, &mut rng);
    let projection = Tensor::<f64>::standard_normal(d_a, d_sig, &mut rng)
        .map(|v| v / libm::sqrt(d_a as f64));
    let centres = Tensor::<f64>::standard_normal(b, d_red, &mut rng)
        .map(|v| v * spec.background_scale);
    let class_signal = attributes.matmul(&projection)?;

    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut rng);
    let mut seen: Vec<usize> = order[..spec.seen_classes].to_vec();
    let mut unseen: Vec<usize> = order[spec.seen_classes..].to_vec();
    seen.sort_unstable();
    unseen.sort_unstable();

    let n = c * spec.examples_per_class;
    let d_x = d_sig + d_red;
    let mut features = Vec::with_capacity(n * d_x);
    let mut labels = Vec::with_capacity(n);
    let mut clusters = Vec::with_capacity(n);
    let noise = Tensor::<f64>::standard_normal(n, d_x, &mut rng);
    for y in 0..c {
        for j in 0..spec.examples_per_class {
            // the first B examples of each class visit every cluster once
            let k = if j < b { (j + y) % b } else { rng.random_range(0..b) };
            let i = labels.len();
            let eps = noise.row(i);
            for (s, e) in class_signal.row(y).iter().zip(&eps[..d_sig]) {
                features.push((s + spec.noise_scale * e) as f32);
            }
            for (m, e) in centres.row(k).iter().zip(&eps[d_sig..]) {
                features.push((m + spec.noise_scale * e) as f32);
            }
            labels.push(y);
            clusters.push(k);
        }
    }

    if c >= 2 {
        for k in 0..b {
            let users: BTreeSet<usize> = labels
                .iter()
                .zip(&clusters)
                .filter(|(_, &kk)| kk == k)
                .map(|(&y, _)| y)
                .collect();
            if users.len() < 2 {
                return Err(Error::Config(format!(
                    "background cluster {k} is used by {} class(es); raise examples_per_class",
                    users.len()
                )));
            }
        }
    }

    let unsplit = DatasetBundle {
        features: Tensor::new(n, d_x, features)?,
        labels,
        attributes: attributes.cast(),
        seen_classes: seen,
        unseen_classes: unseen,
        train_index: Vec::new(),
        test_index: Vec::new(),
    };
    let bundle = split_gzsl(&unsplit, spec.train_fraction, spec.seed ^ 0x5EED_5B11)?;
    Ok(SyntheticData { bundle, clusters })
}

/// Re-partitions `bundle`: `fraction` of every seen class trains, the rest of the
/// seen examples and every unseen example test.
pub fn split_gzsl(bundle: &DatasetBundle, fraction: f64, seed: u64) -> Result<DatasetBundle> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {fraction} not in (0, 1)")));
    }
    let mut rng = crate::rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for &class in &bundle.seen_classes {
        let mut members: Vec<usize> = (0..bundle.labels.len())
            .filter(|&i| bundle.labels[i] == class)
            .collect();
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "seen class {class} has {} example(s); at least 2 are needed to split",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let k = libm::round(fraction * members.len() as f64) as usize;
        let k = k.clamp(1, members.len() - 1);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    test.extend(
        (0..bundle.labels.len()).filter(|&i| bundle.unseen_classes.binary_search(&bundle.labels[i]).is_ok()),
    );
    train.sort_unstable();
    test.sort_unstable();
    DatasetBundle::new(
        bundle.features.clone(),
        bundle.labels.clone(),
        bundle.attributes.clone(),
        bundle.seen_classes.clone(),
        bundle.unseen_classes.clone(),
        train,
        test,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            seen_classes: 4,
            unseen_classes: 2,
            examples_per_class: 10,
            signal_dim: 4,
            redundancy_dim: 6,
            attribute_dim: 3,
            background_clusters: 3,
            seed: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = make_synthetic(&small()).unwrap();
        let b = make_synthetic(&small()).unwrap();
        assert_eq!(a.bundle, b.bundle);
        assert_eq!(a.clusters, b.clusters);
        let mut other = small();
        other.seed = 6;
        assert_ne!(make_synthetic(&other).unwrap().bundle, a.bundle);
    }

    #[test]
    fn class_balance_and_shapes() {
        let spec = small();
        let data = make_synthetic(&spec).unwrap();
        let bundle = &data.bundle;
        assert_eq!(bundle.feature_dim(), 10);
        assert_eq!(bundle.num_classes(), 6);
        for y in 0..6 {
            assert_eq!(bundle.labels.iter().filter(|&&l| l == y).count(), 10);
        }
        assert_eq!(bundle.seen_classes.len(), 4);
        assert_eq!(bundle.unseen_classes.len(), 2);
    }

    #[test]
    fn every_cluster_is_shared() {
        let data = make_synthetic(&small()).unwrap();
        for k in 0..3 {
            let users: BTreeSet<_> = data
                .bundle
                .labels
                .iter()
                .zip(&data.clusters)
                .filter(|(_, &c)| c == k)
                .map(|(y, _)| *y)
                .collect();
            assert!(users.len() >= 2);
        }
    }

    #[test]
    fn split_counts_and_partition() {
        let mut spec = small();
        spec.examples_per_class = 100;
        spec.train_fraction = 0.8;
        let bundle = make_synthetic(&spec).unwrap().bundle;
        for &s in &bundle.seen_classes {
            let k = bundle.train_index.iter().filter(|&&i| bundle.labels[i] == s).count();
            assert_eq!(k, 80);
        }
        for &i in &bundle.train_index {
            assert!(bundle.is_seen(bundle.labels[i]));
        }
        let mut all: Vec<usize> = bundle.train_index.clone();
        all.extend_from_slice(&bundle.test_index);
        all.sort_unstable();
        assert_eq!(all, (0..bundle.num_examples()).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_tiny_class_and_bad_fraction() {
        let bundle = make_synthetic(&small()).unwrap().bundle;
        assert!(matches!(split_gzsl(&bundle, 1.0, 0), Err(Error::Config(_))));
        let mut shrunk = bundle.clone();
        let s = shrunk.seen_classes[0];
        let keep: Vec<usize> = (0..shrunk.labels.len())
            .filter(|&i| shrunk.labels[i] != s || i % 10 == 0)
            .collect();
        shrunk.features = shrunk.features.select_rows(&keep).unwrap();
        shrunk.labels = keep.iter().map(|&i| bundle.labels[i]).collect();
        assert!(matches!(split_gzsl(&shrunk, 0.5, 0), Err(Error::Data(_))));
    }

    #[test]
    fn validation_errors() {
        let bundle = make_synthetic(&small()).unwrap().bundle;

        let mut bad = bundle.clone();
        bad.labels[3] = 6;
        let err = bad.validate().unwrap_err();
        assert!(format!("{err}").contains("label out of range"));

        let mut bad = bundle.clone();
        bad.unseen_classes.push(bad.seen_classes[0]);
        bad.unseen_classes.sort_unstable();
        let err = bad.validate().unwrap_err();
        assert!(format!("{err}").contains("split overlap"));

        let mut bad = bundle.clone();
        let unseen_example = bad.test_index.iter().copied().find(|&i| !bad.is_seen(bad.labels[i])).unwrap();
        bad.train_index.push(unseen_example);
        bad.train_index.sort_unstable();
        bad.test_index.retain(|&i| i != unseen_example);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let mut spec = small();
        spec.unseen_classes = 1;
        assert!(matches!(make_synthetic(&spec), Err(Error::Config(_))));
        let mut spec = small();
        spec.signal_dim = 0;
        assert!(matches!(make_synthetic(&spec), Err(Error::Config(_))));
    }
}
