//! Input-space attribution: vanilla gradient, guided backpropagation and
//! gradient times input, optionally restricted to a concept's units.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ActivationTrace, BackwardRule, LayerMask, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How channels collapse into one value per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    SumAbs,
    MaxAbs,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" | "sum-abs" => Ok(Aggregation::SumAbs),
            "max" | "max-abs" => Ok(Aggregation::MaxAbs),
            other => Err(Error::Parameter(format!("unknown aggregation '{other}'"))),
        }
    }
}

/// Collapses a `C x H x W` or `H x W` attribution into a nonnegative
/// `H x W` grid.
pub fn aggregate_to_map(raw: &Tensor, aggregation: Aggregation) -> Result<Tensor> {
    let (c, h, w) = match *raw.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::Input(format!(
                "cannot aggregate an attribution of shape {:?}",
                raw.shape()
            )))
        }
    };
    let data = raw.as_f32()?;
    let mut out = vec![0.0f32; h * w];
    for ch in 0..c {
        for (o, &x) in out.iter_mut().zip(&data[ch * h * w..(ch + 1) * h * w]) {
            match aggregation {
                Aggregation::SumAbs => *o += x.abs(),
                Aggregation::MaxAbs => *o = o.max(x.abs()),
            }
        }
    }
    Tensor::from_f32(vec![h, w], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// Signed, input-shaped.
    pub raw: Tensor,
    /// `H x W`, nonnegative.
    pub aggregate: Tensor,
}

impl SaliencyMap {
    /// Builds the aggregate from `raw`. A flat (rank-1) input is treated as a
    /// single row of pixels.
    pub fn from_raw(raw: Tensor, aggregation: Aggregation) -> Result<Self> {
        let aggregate = if let [n] = *raw.shape() {
            aggregate_to_map(&raw.clone().reshape(vec![1, n])?, aggregation)?
        } else {
            aggregate_to_map(&raw, aggregation)?
        };
        Ok(SaliencyMap { raw, aggregate })
    }
}

fn to_input_tensor(net: &Network, signal: &[f64]) -> Result<Tensor> {
    Tensor::from_f32(
        net.input_shape().to_vec(),
        signal.iter().map(|&x| x as f32).collect(),
    )
}

/// Gradient of the pre-softmax logit of `target` w.r.t. the input.
pub fn backprop_gradient(net: &Network, trace: &ActivationTrace, target: usize) -> Result<Tensor> {
    let signals = net.backward_signals(trace, target, BackwardRule::Gradient, None)?;
    to_input_tensor(net, signals.input_signal())
}

/// Guided backpropagation signal at the input, optionally suppressing the
/// units switched off by `mask`.
pub fn guided_backprop(
    net: &Network,
    trace: &ActivationTrace,
    target: usize,
    mask: Option<&LayerMask>,
) -> Result<Tensor> {
    let signals = net.backward_signals(trace, target, BackwardRule::Guided, mask)?;
    to_input_tensor(net, signals.input_signal())
}

/// Gradient (optionally masked) times the input, elementwise.
pub fn gradient_times_input(
    net: &Network,
    trace: &ActivationTrace,
    target: usize,
    mask: Option<&LayerMask>,
    aggregation: Aggregation,
) -> Result<SaliencyMap> {
    let signals = net.backward_signals(trace, target, BackwardRule::Gradient, mask)?;
    let raw: Vec<f32> = signals
        .input_signal()
        .iter()
        .zip(trace.input())
        .map(|(&g, &x)| (g * f64::from(x)) as f32)
        .collect();
    SaliencyMap::from_raw(
        Tensor::from_f32(net.input_shape().to_vec(), raw)?,
        aggregation,
    )
}

/// Writes `map` as an 8-bit binary PGM scaled so its maximum is 255.
pub fn write_pgm(map: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let [h, w] = *map.shape() else {
        return Err(Error::Input(format!(
            "PGM needs an H x W map, got {:?}",
            map.shape()
        )));
    };
    let data = map.as_f32()?;
    let max = data.iter().fold(0.0f32, |m, &x| m.max(x));
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(data.iter().map(|&x| {
        if max > 0.0 {
            (x.max(0.0) / max * 255.0).round() as u8
        } else {
            0
        }
    }));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub trait SaliencyMethod: Send + Sync {
    fn name(&self) -> &'static str;

    fn compute(
        &self,
        net: &Network,
        trace: &ActivationTrace,
        target: usize,
        mask: Option<&LayerMask>,
        aggregation: Aggregation,
    ) -> Result<SaliencyMap>;
}

/// Plain gradient. Masking is accepted and applied like for the other
/// methods.
pub struct VanillaGradient;

impl SaliencyMethod for VanillaGradient {
    fn name(&self) -> &'static str {
        "gradient"
    }

    fn compute(
        &self,
        net: &Network,
        trace: &ActivationTrace,
        target: usize,
        mask: Option<&LayerMask>,
        aggregation: Aggregation,
    ) -> Result<SaliencyMap> {
        let signals = net.backward_signals(trace, target, BackwardRule::Gradient, mask)?;
        SaliencyMap::from_raw(to_input_tensor(net, signals.input_signal())?, aggregation)
    }
}

pub struct GuidedBackprop;

impl SaliencyMethod for GuidedBackprop {
    fn name(&self) -> &'static str {
        "guidedbp"
    }

    fn compute(
        &self,
        net: &Network,
        trace: &ActivationTrace,
        target: usize,
        mask: Option<&LayerMask>,
        aggregation: Aggregation,
    ) -> Result<SaliencyMap> {
        SaliencyMap::from_raw(guided_backprop(net, trace, target, mask)?, aggregation)
    }
}

pub struct GradientTimesInput;

impl SaliencyMethod for GradientTimesInput {
    fn name(&self) -> &'static str {
        "gradinput"
    }

    fn compute(
        &self,
        net: &Network,
        trace: &ActivationTrace,
        target: usize,
        mask: Option<&LayerMask>,
        aggregation: Aggregation,
    ) -> Result<SaliencyMap> {
        gradient_times_input(net, trace, target, mask, aggregation)
    }
}

/// Saliency methods by name.
pub struct SaliencyRegistry {
    methods: BTreeMap<String, Box<dyn SaliencyMethod>>,
}

impl SaliencyRegistry {
    pub fn empty() -> Self {
        SaliencyRegistry {
            methods: BTreeMap::new(),
        }
    }

    pub fn with_builtin() -> Self {
        let mut r = SaliencyRegistry::empty();
        r.register(Box::new(VanillaGradient));
        r.register(Box::new(GuidedBackprop));
        r.register(Box::new(GradientTimesInput));
        r
    }

    /// Adds `method`, replacing any method of the same name.
    pub fn register(&mut self, method: Box<dyn SaliencyMethod>) {
        self.methods.insert(method.name().to_string(), method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn SaliencyMethod> {
        self.methods.get(name).map(|m| m.as_ref()).ok_or_else(|| {
            Error::Parameter(format!(
                "unknown saliency method '{name}' (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.methods.keys().map(String::as_str)
    }
}

impl Default for SaliencyRegistry {
    fn default() -> Self {
        SaliencyRegistry::with_builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Layer, LayerKind};
    use crate::sevec::Mask;

    fn linear(w: Vec<f32>) -> Network {
        let n = w.len();
        let mut weight = w;
        weight.extend(vec![0.0; n]);
        Network::new(
            vec![
                Layer::new(
                    "fc",
                    LayerKind::Dense {
                        weight,
                        bias: vec![0.0, 0.0],
                        inputs: n,
                        outputs: 2,
                    },
                ),
                Layer::new("softmax", LayerKind::Softmax),
            ],
            vec![n],
            0,
        )
        .unwrap()
    }

    fn one_unit(sign: f32) -> Network {
        // o = sign * relu(x), second logit constant 0
        Network::new(
            vec![
                Layer::new("relu", LayerKind::Relu),
                Layer::new(
                    "fc",
                    LayerKind::Dense {
                        weight: vec![sign, 0.0],
                        bias: vec![0.0, 0.0],
                        inputs: 1,
                        outputs: 2,
                    },
                ),
                Layer::new("softmax", LayerKind::Softmax),
            ],
            vec![1],
            0,
        )
        .unwrap()
    }

    fn x(v: &[f32]) -> Tensor {
        Tensor::from_f32(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn linear_gradient_is_weight() {
        let net = linear(vec![0.5, -2.0, 3.0]);
        let (_, trace) = net.forward(&x(&[1.0, 2.0, -1.0])).unwrap();
        let g = backprop_gradient(&net, &trace, 0).unwrap();
        assert_eq!(g.as_f32().unwrap(), &[0.5, -2.0, 3.0]);
        let gi = gradient_times_input(&net, &trace, 0, None, Aggregation::SumAbs).unwrap();
        assert_eq!(gi.raw.as_f32().unwrap(), &[0.5, -4.0, -3.0]);
        assert_eq!(gi.aggregate.shape(), &[1, 3]);
        assert_eq!(gi.aggregate.as_f32().unwrap(), &[0.5, 4.0, 3.0]);
        assert!(matches!(
            backprop_gradient(&net, &trace, 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn zero_input_gives_zero_map() {
        let net = linear(vec![0.5, -2.0]);
        let (_, trace) = net.forward(&x(&[0.0, 0.0])).unwrap();
        let gi = gradient_times_input(&net, &trace, 0, None, Aggregation::SumAbs).unwrap();
        assert!(gi.raw.as_f32().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negated_relu_unit() {
        let net = one_unit(-1.0);
        let (_, trace) = net.forward(&x(&[2.0])).unwrap();
        assert_eq!(guided_backprop(&net, &trace, 0, None).unwrap().as_f32().unwrap(), &[0.0]);
        assert_eq!(backprop_gradient(&net, &trace, 0).unwrap().as_f32().unwrap(), &[-1.0]);

        let net = one_unit(1.0);
        let (_, trace) = net.forward(&x(&[2.0])).unwrap();
        assert_eq!(guided_backprop(&net, &trace, 0, None).unwrap().as_f32().unwrap(), &[1.0]);
    }

    #[test]
    fn all_ones_mask_is_identity_and_counts_one_pass() {
        let net = linear(vec![0.5, -2.0, 3.0]);
        let (_, trace) = net.forward(&x(&[1.0, 2.0, 3.0])).unwrap();
        let plain = guided_backprop(&net, &trace, 0, None).unwrap();
        let mask = LayerMask::new(&net, 0, Mask::ones(2)).unwrap();
        let before = net.backward_passes();
        let masked = guided_backprop(&net, &trace, 0, Some(&mask)).unwrap();
        assert_eq!(net.backward_passes(), before + 1);
        assert!(plain.bit_eq(&masked));
    }

    #[test]
    fn aggregation_rules() {
        let raw = Tensor::from_f32(vec![2, 1, 1], vec![1.0, -1.0]).unwrap();
        assert_eq!(aggregate_to_map(&raw, Aggregation::SumAbs).unwrap().as_f32().unwrap(), &[2.0]);
        assert_eq!(aggregate_to_map(&raw, Aggregation::MaxAbs).unwrap().as_f32().unwrap(), &[1.0]);
        let single = Tensor::from_f32(vec![1, 2], vec![-3.0, 0.5]).unwrap();
        assert_eq!(aggregate_to_map(&single, Aggregation::SumAbs).unwrap().as_f32().unwrap(), &[3.0, 0.5]);
        let flat = Tensor::from_f32(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(aggregate_to_map(&flat, Aggregation::SumAbs), Err(Error::Input(_))));
    }

    #[test]
    fn aggregate_matches_loop() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(11);
        let data: Vec<f32> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw = Tensor::from_f32(vec![3, 4, 4], data.clone()).unwrap();
        let agg = aggregate_to_map(&raw, Aggregation::SumAbs).unwrap();
        for h in 0..4 {
            for w in 0..4 {
                let mut s = 0.0f32;
                for c in 0..3 {
                    s += data[c * 16 + h * 4 + w].abs();
                }
                assert_eq!(agg.as_f32().unwrap()[h * 4 + w], s);
            }
        }
    }

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        write_pgm(&Tensor::from_f32(vec![1, 2], vec![1.0, 2.0]).unwrap(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, b"P5\n2 1\n255\n\x80\xff");
    }

    #[test]
    fn registry_lookup() {
        let r = SaliencyRegistry::with_builtin();
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["gradient", "gradinput", "guidedbp"]);
        assert!(r.get("guidedbp").is_ok());
        assert!(matches!(r.get("lrp"), Err(Error::Parameter(_))));
    }
}
