use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::pointcloud::PointCloud;
use crate::tensor::Tensor;

use super::derive_seed;
use super::model::{global_features, Model};
use super::optim::{AdamW, AdamWConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of each class held out for testing.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.01,
            weight_decay: 1e-4,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub classes: usize,
}

/// Stratified split: within each class the members are shuffled from
/// `seed` and the first `round(fraction·count)` go to the test set.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class {
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[class as u64])));
        let n_test = (fraction * members.len() as f64).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Trains a softmax linear classifier on fixed features and reports
/// held-out accuracy. Features are standardized with training statistics.
pub fn probe_features(features: &[Vec<f64>], labels: &[usize], cfg: &ProbeConfig) -> Result<ProbeReport> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::Contract("features and labels must be nonempty and aligned".into()));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Contract("linear probe needs at least two classes".into()));
    }
    let class_index = |l: usize| classes.binary_search(&l).expect("known class");
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Contract("feature vectors differ in length".into()));
    }
    let (train, test) = stratified_split(labels, cfg.test_fraction, cfg.seed);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Contract("split left an empty train or test set".into()));
    }

    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for &i in &train {
        for (m, x) in mean.iter_mut().zip(&features[i]) {
            *m += x / train.len() as f64;
        }
    }
    for &i in &train {
        for d in 0..dim {
            std[d] += (features[i][d] - mean[d]).powi(2) / train.len() as f64;
        }
    }
    let std: Vec<f64> = std.iter().map(|v| v.sqrt().max(1e-8)).collect();
    let (mean, std) = (&mean, &std);
    let design = |idx: &[usize]| -> Result<Tensor> {
        let data = idx
            .iter()
            .flat_map(|&i| (0..dim).map(move |d| (features[i][d] - mean[d]) / std[d]))
            .collect();
        Tensor::matrix(idx.len(), dim, data)
    };
    let onehot = |idx: &[usize]| -> Result<Tensor> {
        let mut t = Tensor::zeros([idx.len(), classes.len()]);
        for (r, &i) in idx.iter().enumerate() {
            t.data_mut()[r * classes.len() + class_index(labels[i])] = 1.0;
        }
        Ok(t)
    };
    let (x_train, y_train) = (design(&train)?, onehot(&train)?);
    let x_test = design(&test)?;

    let mut store = ParamStore::new();
    let w = store.add("probe.weight", Tensor::zeros([dim, classes.len()]));
    let b = store.add("probe.bias", Tensor::zeros([1, classes.len()]));
    let mut opt = AdamW::new(&store, AdamWConfig::with_decay(cfg.weight_decay));
    for _ in 0..cfg.epochs {
        let tape = Tape::new();
        let p = crate::nn::Bound::new(&tape, &store);
        let x = tape.constant(x_train.clone());
        let y = tape.constant(y_train.clone());
        let probs = x.matmul(&p.var(w))?.add(&p.var(b))?.softmax(1.0)?;
        let loss = y.mul(&probs.log()?)?.sum().scale(-1.0 / train.len() as f64);
        let grads = tape.backward(loss)?;
        let g = p.gradients(&grads);
        opt.step(&mut store, &g, cfg.lr)?;
    }

    let predict = |x: &Tensor| -> Result<Vec<usize>> {
        let tape = Tape::new();
        let p = crate::nn::Bound::frozen(&tape, &store);
        let logits = tape.constant(x.clone()).matmul(&p.var(w))?.add(&p.var(b))?;
        let v = logits.value();
        Ok(v.argmax_rows())
    };
    let accuracy = |pred: Vec<usize>, idx: &[usize]| {
        let hits = pred
            .iter()
            .zip(idx)
            .filter(|(&p, &i)| p == class_index(labels[i]))
            .count();
        hits as f64 / idx.len() as f64
    };
    Ok(ProbeReport {
        accuracy: accuracy(predict(&x_test)?, &test),
        train_accuracy: accuracy(predict(&x_train)?, &train),
        train_size: train.len(),
        test_size: test.len(),
        classes: classes.len(),
    })
}

/// Extracts frozen global descriptors for every labeled cloud.
pub fn extract_features(model: &Model, data: &[PointCloud], seed: u64) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut feats = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for (i, cloud) in data.iter().enumerate() {
        let label = cloud
            .label
            .ok_or_else(|| Error::Contract(format!("cloud {i} has no label")))?;
        feats.push(global_features(model, cloud, derive_seed(seed, &[4, i as u64]))?);
        labels.push(label);
    }
    Ok((feats, labels))
}

/// Linear probe of a frozen model: the backbone is only read through
/// constant bindings, so its parameters cannot change.
pub fn linear_probe(model: &Model, data: &[PointCloud], cfg: &ProbeConfig) -> Result<ProbeReport> {
    let (features, labels) = extract_features(model, data, cfg.seed)?;
    probe_features(&features, &labels, cfg)
}

/// Permutes the labels across clouds, keeping class counts. A probe on
/// the result should sit at chance.
pub fn shuffle_labels(data: &mut [PointCloud], seed: u64) {
    let mut labels: Vec<Option<usize>> = data.iter().map(|c| c.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (c, l) in data.iter_mut().zip(labels) {
        c.label = l;
    }
}
