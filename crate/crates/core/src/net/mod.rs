//! A small rectifier-network engine: forward inference with activation
//! traces, exact and guided backward passes, and concept-masked
//! suppression at one layer.

mod gradcheck;
mod io;
mod layer;
mod saliency;
mod train;

use std::sync::atomic::{AtomicUsize, Ordering};

use num_traits::Float;

use crate::error::{Error, Result};
use crate::sevec::{mask_from_sevec, Mask, SemanticVector};
use crate::tensor::Tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use io::{load_network, save_network};
pub use layer::{BackwardRule, Layer, LayerKind};
pub use saliency::{
    aggregate_to_map, backprop_gradient, gradient_times_input, guided_backprop, write_pgm,
    Aggregation, GradientTimesInput, GuidedBackprop, SaliencyMap, SaliencyMethod,
    SaliencyRegistry, VanillaGradient,
};
pub use train::{train_sgd, Dataset, NetworkBuilder, TrainConfig, TrainReport};

#[derive(Debug)]
pub struct Network {
    layers: Vec<Layer>,
    /// `shapes[l]` is the input shape of layer `l`; the last entry is the
    /// network output shape.
    shapes: Vec<Vec<usize>>,
    tap_index: usize,
    class_names: Option<Vec<String>>,
    backward_passes: AtomicUsize,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            tap_index: self.tap_index,
            class_names: self.class_names.clone(),
            backward_passes: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.shapes == other.shapes
            && self.tap_index == other.tap_index
            && self.class_names == other.class_names
    }
}

impl Network {
    /// Validates the layer chain: every layer accepts its predecessor's
    /// output, exactly one softmax closes the network, and the tap layer
    /// exists.
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>, tap_index: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Network("network has no layers".into()));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Network(format!("invalid input shape {input_shape:?}")));
        }
        let softmax_count = layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Softmax))
            .count();
        if softmax_count != 1 || !matches!(layers.last().map(|l| &l.kind), Some(LayerKind::Softmax)) {
            return Err(Error::Network(
                "network must contain exactly one softmax, as its last layer".into(),
            ));
        }
        if tap_index >= layers.len() {
            return Err(Error::Index {
                index: tap_index,
                len: layers.len(),
            });
        }
        let mut names = std::collections::HashSet::new();
        let mut shapes = vec![input_shape];
        for (i, layer) in layers.iter().enumerate() {
            if !names.insert(layer.name.as_str()) {
                return Err(Error::Network(format!("duplicate layer name '{}'", layer.name)));
            }
            let shape_err = |message: String| Error::Shape {
                layer: i,
                name: layer.name.clone(),
                message,
            };
            layer.validate().map_err(shape_err)?;
            let out = layer
                .output_shape(shapes.last().expect("nonempty"))
                .map_err(shape_err)?;
            shapes.push(out);
        }
        Ok(Network {
            layers,
            shapes,
            tap_index,
            class_names: None,
            backward_passes: AtomicUsize::new(0),
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes() {
            return Err(Error::Network(format!(
                "{} class names for {} outputs",
                names.len(),
                self.num_classes()
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn layer_output_shape(&self, l: usize) -> &[usize] {
        &self.shapes[l + 1]
    }

    pub fn tap_index(&self) -> usize {
        self.tap_index
    }

    pub fn tap_width(&self) -> usize {
        self.layer_output_shape(self.tap_index).iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().expect("nonempty")[0]
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::Network(format!("no layer named '{name}'")))
    }

    /// Output index for a class label: a declared class name, or else the
    /// label parsed as an index.
    pub fn class_index(&self, label: &str) -> Option<usize> {
        if let Some(names) = &self.class_names {
            if let Some(i) = names.iter().position(|n| n == label) {
                return Some(i);
            }
        }
        label.parse().ok().filter(|&i| i < self.num_classes())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn softmax_index(&self) -> usize {
        self.layers.len() - 1
    }

    /// Number of backward traversals performed on this network so far.
    pub fn backward_passes(&self) -> usize {
        self.backward_passes.load(Ordering::Relaxed)
    }

    fn check_input(&self, shape: &[usize], expected: &[usize], what: &str) -> Result<()> {
        if shape != expected {
            return Err(Error::Input(format!(
                "{what} shape {shape:?} does not match expected {expected:?}"
            )));
        }
        Ok(())
    }

    /// Runs layers `start..` on `input` (the input of layer `start`) and
    /// returns each layer's output.
    pub(crate) fn run<T: Float>(&self, start: usize, input: Vec<T>) -> Vec<Vec<T>> {
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len() - start);
        for l in start..self.layers.len() {
            let x = outputs.last().unwrap_or(&input);
            let y = layer::forward(&self.layers[l].kind, x, &self.shapes[l], &self.shapes[l + 1]);
            outputs.push(y);
        }
        outputs
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Vec<f32>, ActivationTrace)> {
        self.check_input(input.shape(), self.input_shape(), "input")?;
        let x = input.as_f32()?.to_vec();
        let outputs = self.run(0, x.clone());
        let probabilities = outputs.last().expect("nonempty").clone();
        Ok((
            probabilities,
            ActivationTrace {
                input: x,
                outputs,
            },
        ))
    }

    /// Scores a representation taken at the tap layer by running only the
    /// layers above it.
    pub fn forward_from(&self, rep: &Tensor) -> Result<Vec<f32>> {
        self.check_input(rep.shape(), self.layer_output_shape(self.tap_index), "representation")?;
        Ok(self.forward_from_slice(rep.as_f32()?))
    }

    pub(crate) fn forward_from_slice(&self, rep: &[f32]) -> Vec<f32> {
        if self.tap_index + 1 == self.layers.len() {
            return rep.to_vec();
        }
        self.run(self.tap_index + 1, rep.to_vec())
            .pop()
            .expect("at least the softmax")
    }

    /// Representation at the tap layer.
    pub fn features(&self, input: &Tensor) -> Result<Vec<f32>> {
        let (_, trace) = self.forward(input)?;
        Ok(trace.outputs[self.tap_index].clone())
    }

    /// Builds the keep-mask of `v` for `layer` (the tap layer when `None`).
    pub fn semantic_mask(
        &self,
        v: &SemanticVector,
        threshold: f32,
        layer: Option<&str>,
    ) -> Result<LayerMask> {
        let layer = match layer {
            Some(name) => self.layer_index(name)?,
            None => self.tap_index,
        };
        LayerMask::new(self, layer, mask_from_sevec(v, threshold)?)
    }

    /// Backward signals at every layer for the pre-softmax logit of
    /// `target`, under `rule` and an optional mask.
    pub fn backward_signals(
        &self,
        trace: &ActivationTrace,
        target: usize,
        rule: BackwardRule,
        mask: Option<&LayerMask>,
    ) -> Result<BackwardSignals> {
        self.backward(trace, target_seed(self, target)?, rule, mask)
    }

    /// One backward traversal from the pre-softmax logits down to the input.
    /// `seed` is the signal w.r.t. the logits. When `mask` is given, the
    /// signal w.r.t. the masked layer's output is zeroed where the mask is
    /// off before it continues downward.
    pub(crate) fn backward(
        &self,
        trace: &ActivationTrace,
        seed: Vec<f64>,
        rule: BackwardRule,
        mask: Option<&LayerMask>,
    ) -> Result<BackwardSignals> {
        self.check_trace(trace)?;
        if let Some(m) = mask {
            m.check(self)?;
        }
        self.backward_passes.fetch_add(1, Ordering::Relaxed);
        let top = self.softmax_index();
        let mut signals: Vec<Vec<f64>> = vec![Vec::new(); top + 1];
        signals[top] = seed;
        for l in (0..top).rev() {
            let mut upstream = std::mem::take(&mut signals[l + 1]);
            if let Some(m) = mask.filter(|m| m.layer == l) {
                for (u, &keep) in upstream.iter_mut().zip(m.mask.bits()) {
                    if !keep {
                        *u = 0.0;
                    }
                }
            }
            signals[l] = layer::backward(
                &self.layers[l].kind,
                rule,
                trace.layer_input(l),
                &self.shapes[l],
                &self.shapes[l + 1],
                &upstream,
            );
            signals[l + 1] = upstream;
        }
        Ok(BackwardSignals { signals })
    }

    fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        let ok = trace.outputs.len() == self.layers.len()
            && trace.input.len() == self.shapes[0].iter().product::<usize>()
            && trace
                .outputs
                .iter()
                .zip(&self.shapes[1..])
                .all(|(o, s)| o.len() == s.iter().product::<usize>());
        if !ok {
            return Err(Error::Input("activation trace does not match network".into()));
        }
        Ok(())
    }

    pub(crate) fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.num_classes() {
            return Err(Error::Index {
                index: target,
                len: self.num_classes(),
            });
        }
        Ok(())
    }
}

/// Inputs and outputs of every layer for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    input: Vec<f32>,
    outputs: Vec<Vec<f32>>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn input(&self) -> &[f32] {
        &self.input
    }

    /// `X^l`, the input of layer `l`.
    pub fn layer_input(&self, l: usize) -> &[f32] {
        if l == 0 {
            &self.input
        } else {
            &self.outputs[l - 1]
        }
    }

    pub fn layer_output(&self, l: usize) -> &[f32] {
        &self.outputs[l]
    }

    pub fn probabilities(&self) -> &[f32] {
        self.outputs.last().expect("nonempty")
    }

    /// Pre-softmax scores.
    pub fn logits(&self) -> &[f32] {
        self.layer_input(self.outputs.len() - 1)
    }
}

/// Backward signal at the input of every layer up to the softmax:
/// `signal(l)` is the signal w.r.t. the input of layer `l`, and
/// `signal(softmax_index)` the seed at the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSignals {
    signals: Vec<Vec<f64>>,
}

impl BackwardSignals {
    pub fn signal(&self, l: usize) -> &[f64] {
        &self.signals[l]
    }

    pub fn input_signal(&self) -> &[f64] {
        &self.signals[0]
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }
}

/// A keep-mask over the output units of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMask {
    pub layer: usize,
    pub mask: Mask,
}

impl LayerMask {
    pub fn new(net: &Network, layer: usize, mask: Mask) -> Result<Self> {
        let m = LayerMask { layer, mask };
        m.check(net)?;
        Ok(m)
    }

    fn check(&self, net: &Network) -> Result<()> {
        if self.layer >= net.softmax_index() {
            return Err(Error::Mask(format!(
                "cannot mask layer {} (the softmax or beyond)",
                self.layer
            )));
        }
        let width: usize = net.layer_output_shape(self.layer).iter().product();
        if self.mask.len() != width {
            return Err(Error::Mask(format!(
                "mask has {} entries but layer '{}' outputs {width}",
                self.mask.len(),
                net.layers[self.layer].name
            )));
        }
        Ok(())
    }
}

/// Signal at the logits that selects class `target`.
pub(crate) fn target_seed(net: &Network, target: usize) -> Result<Vec<f64>> {
    net.check_target(target)?;
    let mut seed = vec![0.0; net.num_classes()];
    seed[target] = 1.0;
    Ok(seed)
}
