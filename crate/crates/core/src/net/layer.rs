//! Layer kinds, shape inference, and the per-layer forward/backward math.
//!
//! Forward math is generic over the scalar so the same code path can be
//! evaluated in f64 for verification. Backward signals are carried in f64.

use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// `weight` is row-major `outputs x inputs`.
    Dense {
        weight: Vec<f32>,
        bias: Vec<f32>,
        inputs: usize,
        outputs: usize,
    },
    Relu,
    /// `kernel` is row-major `out_channels x in_channels x kh x kw`.
    Conv2d {
        kernel: Vec<f32>,
        bias: Vec<f32>,
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Softmax,
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::Softmax => "softmax",
        }
    }

    pub fn has_parameters(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv2d { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Layer {
            name: name.into(),
            kind,
        }
    }

    /// Checks internal consistency of weights and hyper-parameters.
    pub(crate) fn validate(&self) -> Result<(), String> {
        match &self.kind {
            LayerKind::Dense {
                weight,
                bias,
                inputs,
                outputs,
            } => {
                if *inputs == 0 || *outputs == 0 {
                    return Err("dense layer with zero width".into());
                }
                if weight.len() != inputs * outputs {
                    return Err(format!(
                        "weight has {} entries, expected {outputs}x{inputs}",
                        weight.len()
                    ));
                }
                if bias.len() != *outputs {
                    return Err(format!("bias has {} entries, expected {outputs}", bias.len()));
                }
            }
            LayerKind::Conv2d {
                kernel,
                bias,
                out_channels,
                in_channels,
                kh,
                kw,
                stride,
                ..
            } => {
                if *stride == 0 {
                    return Err("stride must be at least 1".into());
                }
                if [*out_channels, *in_channels, *kh, *kw].contains(&0) {
                    return Err("conv2d with a zero-sized dimension".into());
                }
                if kernel.len() != out_channels * in_channels * kh * kw {
                    return Err(format!(
                        "kernel has {} entries, expected {out_channels}x{in_channels}x{kh}x{kw}",
                        kernel.len()
                    ));
                }
                if bias.len() != *out_channels {
                    return Err(format!(
                        "bias has {} entries, expected {out_channels}",
                        bias.len()
                    ));
                }
            }
            LayerKind::MaxPool2d { window, stride } => {
                if *window == 0 || *stride == 0 {
                    return Err("pool window and stride must be at least 1".into());
                }
            }
            LayerKind::Relu | LayerKind::Flatten | LayerKind::Softmax => {}
        }
        Ok(())
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match &self.kind {
            LayerKind::Dense {
                inputs, outputs, ..
            } => match input {
                [n] if n == inputs => Ok(vec![*outputs]),
                _ => Err(format!("dense expects input [{inputs}], got {input:?}")),
            },
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kh,
                kw,
                stride,
                padding,
                ..
            } => match input {
                [c, h, w] if c == in_channels => {
                    let oh = conv_out(*h, *kh, *stride, *padding)
                        .ok_or_else(|| format!("kernel {kh} larger than padded height {h}"))?;
                    let ow = conv_out(*w, *kw, *stride, *padding)
                        .ok_or_else(|| format!("kernel {kw} larger than padded width {w}"))?;
                    Ok(vec![*out_channels, oh, ow])
                }
                _ => Err(format!(
                    "conv2d expects input [{in_channels}, H, W], got {input:?}"
                )),
            },
            LayerKind::MaxPool2d { window, stride } => {
                let (lead, h, w) = match input {
                    [h, w] => (vec![], *h, *w),
                    [c, h, w] => (vec![*c], *h, *w),
                    _ => return Err(format!("maxpool2d expects rank 2 or 3, got {input:?}")),
                };
                let oh = conv_out(h, *window, *stride, 0)
                    .ok_or_else(|| format!("window {window} larger than height {h}"))?;
                let ow = conv_out(w, *window, *stride, 0)
                    .ok_or_else(|| format!("window {window} larger than width {w}"))?;
                let mut out = lead;
                out.extend([oh, ow]);
                Ok(out)
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Softmax => match input {
                [n] => Ok(vec![*n]),
                _ => Err(format!("softmax expects rank 1, got {input:?}")),
            },
        }
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

/// `(channels, height, width)` view of a rank-2 or rank-3 shape.
fn chw(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        _ => unreachable!("validated spatial shape"),
    }
}

fn cast<T: Float>(x: f32) -> T {
    T::from(x).expect("f32 fits every float type")
}

/// Forward pass of one layer. `in_shape`/`out_shape` come from validation.
pub(crate) fn forward<T: Float>(
    kind: &LayerKind,
    input: &[T],
    in_shape: &[usize],
    out_shape: &[usize],
) -> Vec<T> {
    match kind {
        LayerKind::Dense {
            weight,
            bias,
            inputs,
            outputs,
        } => (0..*outputs)
            .map(|o| {
                let row = &weight[o * inputs..(o + 1) * inputs];
                row.iter()
                    .zip(input)
                    .fold(cast::<T>(bias[o]), |acc, (&w, &x)| acc + cast::<T>(w) * x)
            })
            .collect(),
        LayerKind::Relu => input
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect(),
        LayerKind::Conv2d {
            kernel,
            bias,
            in_channels,
            kh,
            kw,
            stride,
            padding,
            ..
        } => {
            let (_, h, w) = chw(in_shape);
            let (oc, oh, ow) = chw(out_shape);
            let mut out = Vec::with_capacity(oc * oh * ow);
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = cast::<T>(bias[o]);
                        for c in 0..*in_channels {
                            for ky in 0..*kh {
                                let iy = (oy * stride + ky) as isize - *padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..*kw {
                                    let ix = (ox * stride + kx) as isize - *padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = kernel[((o * in_channels + c) * kh + ky) * kw + kx];
                                    acc = acc
                                        + cast::<T>(wv)
                                            * input[(c * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
            out
        }
        LayerKind::MaxPool2d { .. } => {
            let idx = pool_argmax(kind, input, in_shape, out_shape);
            idx.into_iter().map(|i| input[i]).collect()
        }
        LayerKind::Flatten => input.to_vec(),
        LayerKind::Softmax => softmax(input),
    }
}

pub(crate) fn softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Flat input index of the maximum in each pooling window; ties resolve to
/// the first position in row-major window order.
pub(crate) fn pool_argmax<T: Float>(
    kind: &LayerKind,
    input: &[T],
    in_shape: &[usize],
    out_shape: &[usize],
) -> Vec<usize> {
    let LayerKind::MaxPool2d { window, stride } = kind else {
        unreachable!("pool_argmax on non-pool layer")
    };
    let (c, h, w) = chw(in_shape);
    let (_, oh, ow) = chw(out_shape);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (ch * h + oy * stride) * w + ox * stride;
                for ky in 0..*window {
                    for kx in 0..*window {
                        let i = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                        if input[i] > input[best] {
                            best = i;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

/// How the backward pass treats rectifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardRule {
    /// Exact gradient: pass where the forward input was positive.
    Gradient,
    /// Guided backpropagation: pass only where the forward input and the
    /// incoming signal are both positive.
    Guided,
}

/// Propagates `upstream` (signal w.r.t. the layer output) to the layer input.
pub(crate) fn backward(
    kind: &LayerKind,
    rule: BackwardRule,
    input: &[f32],
    in_shape: &[usize],
    out_shape: &[usize],
    upstream: &[f64],
) -> Vec<f64> {
    match kind {
        LayerKind::Dense {
            weight,
            inputs,
            outputs,
            ..
        } => {
            let mut g = vec![0.0f64; *inputs];
            for o in 0..*outputs {
                let u = upstream[o];
                if u == 0.0 {
                    continue;
                }
                let row = &weight[o * inputs..(o + 1) * inputs];
                for (gi, &wv) in g.iter_mut().zip(row) {
                    *gi += f64::from(wv) * u;
                }
            }
            g
        }
        LayerKind::Relu => input
            .iter()
            .zip(upstream)
            .map(|(&x, &u)| {
                let pass = match rule {
                    BackwardRule::Gradient => x > 0.0,
                    BackwardRule::Guided => x > 0.0 && u > 0.0,
                };
                if pass {
                    u
                } else {
                    0.0
                }
            })
            .collect(),
        LayerKind::Conv2d {
            kernel,
            in_channels,
            kh,
            kw,
            stride,
            padding,
            ..
        } => {
            let (_, h, w) = chw(in_shape);
            let (oc, oh, ow) = chw(out_shape);
            let mut g = vec![0.0f64; in_channels * h * w];
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let u = upstream[(o * oh + oy) * ow + ox];
                        if u == 0.0 {
                            continue;
                        }
                        for c in 0..*in_channels {
                            for ky in 0..*kh {
                                let iy = (oy * stride + ky) as isize - *padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..*kw {
                                    let ix = (ox * stride + kx) as isize - *padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = kernel[((o * in_channels + c) * kh + ky) * kw + kx];
                                    g[(c * h + iy as usize) * w + ix as usize] +=
                                        f64::from(wv) * u;
                                }
                            }
                        }
                    }
                }
            }
            g
        }
        LayerKind::MaxPool2d { .. } => {
            let mut g = vec![0.0f64; input.len()];
            for (&src, &u) in pool_argmax(kind, input, in_shape, out_shape)
                .iter()
                .zip(upstream)
            {
                g[src] += u;
            }
            g
        }
        LayerKind::Flatten => upstream.to_vec(),
        LayerKind::Softmax => unreachable!("backward starts below the softmax"),
    }
}

/// Gradients of a parameterized layer's weights and bias given the upstream
/// signal. Returns `None` for parameter-free layers.
pub(crate) fn parameter_gradients(
    kind: &LayerKind,
    input: &[f32],
    in_shape: &[usize],
    out_shape: &[usize],
    upstream: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    match kind {
        LayerKind::Dense {
            inputs, outputs, ..
        } => {
            let mut gw = vec![0.0f64; inputs * outputs];
            for o in 0..*outputs {
                for (i, &x) in input.iter().enumerate() {
                    gw[o * inputs + i] = upstream[o] * f64::from(x);
                }
            }
            Some((gw, upstream.to_vec()))
        }
        LayerKind::Conv2d {
            in_channels,
            kh,
            kw,
            stride,
            padding,
            ..
        } => {
            let (_, h, w) = chw(in_shape);
            let (oc, oh, ow) = chw(out_shape);
            let mut gw = vec![0.0f64; oc * in_channels * kh * kw];
            let mut gb = vec![0.0f64; oc];
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let u = upstream[(o * oh + oy) * ow + ox];
                        gb[o] += u;
                        if u == 0.0 {
                            continue;
                        }
                        for c in 0..*in_channels {
                            for ky in 0..*kh {
                                let iy = (oy * stride + ky) as isize - *padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..*kw {
                                    let ix = (ox * stride + kx) as isize - *padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    gw[((o * in_channels + c) * kh + ky) * kw + kx] +=
                                        u * f64::from(input[(c * h + iy as usize) * w + ix as usize]);
                                }
                            }
                        }
                    }
                }
            }
            Some((gw, gb))
        }
        _ => None,
    }
}
