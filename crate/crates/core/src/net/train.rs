//! Seeded construction and plain SGD training for small fixture networks.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::layer::{self, parameter_gradients, BackwardRule, Layer, LayerKind};
use super::{ActivationTrace, Network};
use crate::error::{Error, Result};
use crate::rng::{seeded, SeededRng};
use crate::tensor::Tensor;

/// Appends layers one at a time with He-normal weights and zero biases.
/// Layers are named `<kind><n>`; the softmax is added by [`build`].
///
/// [`build`]: NetworkBuilder::build
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    shape: Vec<usize>,
    layers: Vec<Layer>,
    tap: Option<usize>,
    classes: Option<Vec<String>>,
    rng: SeededRng,
    error: Option<Error>,
}

impl NetworkBuilder {
    pub fn new(input_shape: Vec<usize>, seed: u64) -> Self {
        NetworkBuilder {
            shape: input_shape.clone(),
            input_shape,
            layers: Vec::new(),
            tap: None,
            classes: None,
            rng: seeded(seed),
            error: None,
        }
    }

    fn he(&mut self, fan_in: usize, n: usize) -> Vec<f32> {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        (0..n).map(|_| normal.sample(&mut self.rng) as f32).collect()
    }

    fn push(mut self, kind: LayerKind) -> Self {
        if self.error.is_some() {
            return self;
        }
        let count = self.layers.iter().filter(|l| l.kind.tag() == kind.tag()).count();
        let layer = Layer::new(format!("{}{}", kind.tag(), count + 1), kind);
        match layer.output_shape(&self.shape) {
            Ok(shape) => {
                self.shape = shape;
                self.layers.push(layer);
            }
            Err(message) => {
                self.error = Some(Error::Shape {
                    layer: self.layers.len(),
                    name: layer.name,
                    message,
                })
            }
        }
        self
    }

    pub fn dense(mut self, outputs: usize) -> Self {
        let inputs: usize = self.shape.iter().product();
        let weight = self.he(inputs.max(1), inputs * outputs);
        self.push(LayerKind::Dense {
            weight,
            bias: vec![0.0; outputs],
            inputs,
            outputs,
        })
    }

    pub fn conv2d(mut self, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let in_channels = if self.shape.len() == 3 { self.shape[0] } else { 0 };
        let fan_in = (in_channels * kernel * kernel).max(1);
        let kernel_w = self.he(fan_in, out_channels * in_channels * kernel * kernel);
        self.push(LayerKind::Conv2d {
            kernel: kernel_w,
            bias: vec![0.0; out_channels],
            out_channels,
            in_channels,
            kh: kernel,
            kw: kernel,
            stride,
            padding,
        })
    }

    pub fn relu(self) -> Self {
        self.push(LayerKind::Relu)
    }

    pub fn maxpool(self, window: usize, stride: usize) -> Self {
        self.push(LayerKind::MaxPool2d { window, stride })
    }

    pub fn flatten(self) -> Self {
        self.push(LayerKind::Flatten)
    }

    /// Marks the most recently added layer as the tap layer.
    pub fn tap(mut self) -> Self {
        self.tap = self.layers.len().checked_sub(1);
        self
    }

    pub fn classes(mut self, names: Vec<String>) -> Self {
        self.classes = Some(names);
        self
    }

    /// Appends the softmax and validates. The tap defaults to the layer
    /// right below the softmax.
    pub fn build(mut self) -> Result<Network> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        let tap = self.tap.unwrap_or(self.layers.len().saturating_sub(1));
        let builder = self.push(LayerKind::Softmax);
        if let Some(e) = builder.error {
            return Err(e);
        }
        let net = Network::new(builder.layers, builder.input_shape, tap)?;
        match builder.classes {
            Some(names) => net.with_class_names(names),
            None => Ok(net),
        }
    }
}

/// Labelled inputs of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_shape: Vec<usize>,
    inputs: Vec<Vec<f32>>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(input_shape: Vec<usize>, inputs: Vec<Vec<f32>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("dataset has no samples".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Dimension {
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        let width: usize = input_shape.iter().product();
        if let Some(bad) = inputs.iter().find(|x| x.len() != width) {
            return Err(Error::Dimension {
                expected: width,
                got: bad.len(),
            });
        }
        Ok(Dataset {
            input_shape,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn tensor(&self, i: usize) -> Tensor {
        Tensor::from_f32(self.input_shape.clone(), self.inputs[i].clone())
            .expect("validated at construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 0.05,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy on the full set before training.
    pub initial_loss: f64,
    /// Mean cross-entropy on the full set after each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

fn trace_of(net: &Network, x: &[f32]) -> ActivationTrace {
    ActivationTrace {
        input: x.to_vec(),
        outputs: net.run(0, x.to_vec()),
    }
}

/// Mean cross-entropy and accuracy over `data`.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<(f64, f64)> {
    check_dataset(net, data)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for i in 0..data.len() {
        let trace = trace_of(net, data.input(i));
        let logits: Vec<f64> = trace.logits().iter().map(|&v| f64::from(v)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - logits[data.label(i)];
        let predicted = logits
            .iter()
            .enumerate()
            .fold(0, |best, (j, &v)| if v > logits[best] { j } else { best });
        correct += usize::from(predicted == data.label(i));
    }
    let loss = loss / data.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Training(format!("loss is {loss}")));
    }
    Ok((loss, correct as f64 / data.len() as f64))
}

fn check_dataset(net: &Network, data: &Dataset) -> Result<()> {
    if data.input_shape() != net.input_shape() {
        return Err(Error::Input(format!(
            "dataset shape {:?} does not match network input {:?}",
            data.input_shape(),
            net.input_shape()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= net.num_classes()) {
        return Err(Error::Index {
            index: bad,
            len: net.num_classes(),
        });
    }
    Ok(())
}

/// Mini-batch SGD on mean cross-entropy. Sample order is reshuffled every
/// epoch from `config.seed`, so equal seeds give bit-identical weights.
pub fn train_sgd(net: &Network, data: &Dataset, config: &TrainConfig) -> Result<(Network, TrainReport)> {
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(Error::Parameter(format!("learning rate must be positive, got {}", config.lr)));
    }
    if config.batch_size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    let mut net = net.clone();
    let (initial_loss, _) = evaluate(&net, data)?;
    let mut rng = seeded(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut accuracy = evaluate(&net, data)?.1;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let grads = batch_gradients(&net, data, batch);
            let scale = f64::from(config.lr) / batch.len() as f64;
            for (layer, grad) in net.layers_mut().iter_mut().zip(grads) {
                let Some((gw, gb)) = grad else { continue };
                let (weight, bias) = match &mut layer.kind {
                    LayerKind::Dense { weight, bias, .. } => (weight, bias),
                    LayerKind::Conv2d { kernel, bias, .. } => (kernel, bias),
                    _ => continue,
                };
                for (w, g) in weight.iter_mut().zip(gw) {
                    *w -= (scale * g) as f32;
                }
                for (b, g) in bias.iter_mut().zip(gb) {
                    *b -= (scale * g) as f32;
                }
            }
        }
        let (loss, acc) = evaluate(&net, data)?;
        epoch_losses.push(loss);
        accuracy = acc;
    }
    Ok((
        net,
        TrainReport {
            initial_loss,
            epoch_losses,
            train_accuracy: accuracy,
        },
    ))
}

type ParamGrads = Vec<Option<(Vec<f64>, Vec<f64>)>>;

fn batch_gradients(net: &Network, data: &Dataset, batch: &[usize]) -> ParamGrads {
    let mut total: ParamGrads = vec![None; net.layers().len()];
    for &i in batch {
        let trace = trace_of(net, data.input(i));
        let logits: Vec<f64> = trace.logits().iter().map(|&v| f64::from(v)).collect();
        let mut seed = layer::softmax(&logits);
        seed[data.label(i)] -= 1.0;
        let signals = net
            .backward(&trace, seed, BackwardRule::Gradient, None)
            .expect("trace comes from this network");
        for (l, layer) in net.layers().iter().enumerate() {
            if !layer.kind.has_parameters() {
                continue;
            }
            let Some((gw, gb)) = parameter_gradients(
                &layer.kind,
                trace.layer_input(l),
                &net.shapes[l],
                &net.shapes[l + 1],
                signals.signal(l + 1),
            ) else {
                continue;
            };
            match &mut total[l] {
                Some((tw, tb)) => {
                    tw.iter_mut().zip(&gw).for_each(|(t, g)| *t += g);
                    tb.iter_mut().zip(&gb).for_each(|(t, g)| *t += g);
                }
                slot => *slot = Some((gw, gb)),
            }
        }
    }
    total
}
