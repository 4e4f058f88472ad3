//! Small seeded fixtures: a labelled concept dataset with a trained
//! rectifier network, and random convolutional networks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::features::FeatureSet;
use crate::net::{train_sgd, Dataset, Network, NetworkBuilder, TrainConfig, TrainReport};
use crate::rng::{derive, seeded};

/// Shape of the concept dataset. Each class owns `dims_per_class` input
/// dimensions that fire strongly for it; the dimensions of other classes
/// fire weakly with probability `clutter_prob`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConceptFixtureConfig {
    pub classes: usize,
    pub dims_per_class: usize,
    pub hidden: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub active_prob: f64,
    pub clutter_prob: f64,
    pub clutter_amp: f32,
    pub noise: f32,
    pub train: TrainConfig,
}

impl Default for ConceptFixtureConfig {
    fn default() -> Self {
        ConceptFixtureConfig {
            classes: 4,
            dims_per_class: 4,
            hidden: 256,
            train_per_class: 60,
            test_per_class: 40,
            active_prob: 0.7,
            clutter_prob: 0.4,
            clutter_amp: 0.6,
            noise: 0.1,
            train: TrainConfig {
                epochs: 20,
                lr: 0.05,
                batch_size: 16,
                seed: 0,
            },
        }
    }
}

pub fn class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| format!("c{c}")).collect()
}

/// `per_class` samples of every class, interleaved by class.
pub fn concept_dataset(cfg: &ConceptFixtureConfig, per_class: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeded(seed);
    let noise = Normal::new(0.0, f64::from(cfg.noise)).expect("nonnegative std");
    let dim = cfg.classes * cfg.dims_per_class;
    let mut inputs = Vec::with_capacity(per_class * cfg.classes);
    let mut labels = Vec::with_capacity(per_class * cfg.classes);
    for _ in 0..per_class {
        for c in 0..cfg.classes {
            let mut x = vec![0.0f32; dim];
            let own = c * cfg.dims_per_class..(c + 1) * cfg.dims_per_class;
            // at least one of the class's own dimensions is on
            let forced = rng.random_range(own.clone());
            for (j, v) in x.iter_mut().enumerate() {
                let on_own = own.contains(&j);
                if on_own && (j == forced || rng.random_bool(cfg.active_prob)) {
                    *v = rng.random_range(0.6..1.0);
                } else if !on_own && rng.random_bool(cfg.clutter_prob) {
                    *v = cfg.clutter_amp * rng.random_range(0.5..1.0f32);
                }
                *v += noise.sample(&mut rng) as f32;
            }
            inputs.push(x);
            labels.push(c);
        }
    }
    Dataset::new(vec![dim], inputs, labels)
}

/// A trained network with a rectified hidden tap layer, plus its train and
/// held-out data.
pub struct ConceptFixture {
    pub net: Network,
    pub train: Dataset,
    pub test: Dataset,
    pub report: TrainReport,
}

pub fn concept_fixture(cfg: &ConceptFixtureConfig, seed: u64) -> Result<ConceptFixture> {
    let train = concept_dataset(cfg, cfg.train_per_class, derive(seed, 0).random())?;
    let test = concept_dataset(cfg, cfg.test_per_class, derive(seed, 1).random())?;
    let net = NetworkBuilder::new(vec![cfg.classes * cfg.dims_per_class], derive(seed, 2).random())
        .dense(cfg.hidden)
        .relu()
        .tap()
        .dense(cfg.classes)
        .classes(class_names(cfg.classes))
        .build()?;
    let train_cfg = TrainConfig {
        seed: derive(seed, 3).random(),
        ..cfg.train
    };
    let (net, report) = train_sgd(&net, &train, &train_cfg)?;
    Ok(ConceptFixture {
        net,
        train,
        test,
        report,
    })
}

/// Tap-layer representations of every sample, labelled with the network's
/// class names when it has them.
pub fn tap_features(net: &Network, data: &Dataset) -> Result<FeatureSet> {
    let mut rows = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        rows.push(net.features(&data.tensor(i))?);
        let y = data.label(i);
        labels.push(Some(match net.class_names() {
            Some(names) => names[y].clone(),
            None => y.to_string(),
        }));
    }
    FeatureSet::from_rows(&rows)?.with_labels(labels)
}

/// Untrained conv/relu/pool/dense network on `1 x 6 x 6` inputs with
/// random biases. The tap is the pooled layer.
pub fn random_cnn(seed: u64) -> Result<Network> {
    let mut net = NetworkBuilder::new(vec![1, 6, 6], seed)
        .conv2d(3, 3, 1, 1)
        .relu()
        .maxpool(2, 2)
        .tap()
        .flatten()
        .dense(8)
        .relu()
        .dense(3)
        .build()?;
    randomize_biases(&mut net, derive(seed, 1).random());
    Ok(net)
}

/// Untrained dense network with two rectified hidden layers and random
/// biases; the tap is the first rectifier.
pub fn random_mlp(seed: u64, inputs: usize, hidden: usize, classes: usize) -> Result<Network> {
    let mut net = NetworkBuilder::new(vec![inputs], seed)
        .dense(hidden)
        .relu()
        .tap()
        .dense(hidden)
        .relu()
        .dense(classes)
        .build()?;
    randomize_biases(&mut net, derive(seed, 1).random());
    Ok(net)
}

fn randomize_biases(net: &mut Network, seed: u64) {
    use crate::net::LayerKind;
    let mut rng = seeded(seed);
    for layer in net.layers_mut() {
        if let LayerKind::Dense { bias, .. } | LayerKind::Conv2d { bias, .. } = &mut layer.kind {
            for b in bias.iter_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
    }
}

/// Random input of the network's input shape, uniform in `[-1, 1)`.
pub fn random_input(net: &Network, seed: u64) -> crate::tensor::Tensor {
    let mut rng = seeded(seed);
    let n: usize = net.input_shape().iter().product();
    crate::tensor::Tensor::from_f32(
        net.input_shape().to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("shape from a validated network")
}
