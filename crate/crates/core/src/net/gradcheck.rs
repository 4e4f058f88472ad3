//! Central finite differences against the analytic input gradient.
//!
//! The network is piecewise linear below the softmax, so within one
//! activation region the central difference is exact up to rounding. The
//! check is run in f64 and any coordinate whose perturbation changes the
//! activation pattern (rectifier signs, pooling winners) is excluded.

use num_traits::Float;

use super::layer::{pool_argmax, LayerKind};
use super::saliency::backprop_gradient;
use super::Network;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a kink.
    pub excluded: usize,
}

/// Activation pattern of one forward pass: for each rectifier the set of
/// positive inputs, for each pooling layer the winning positions.
fn pattern<T: Float>(net: &Network, input: &[T], outputs: &[Vec<T>]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        let x = if l == 0 { input } else { &outputs[l - 1] };
        match &layer.kind {
            LayerKind::Relu => out.push(
                x.iter()
                    .map(|&v| usize::from(v > T::zero()))
                    .collect(),
            ),
            LayerKind::MaxPool2d { .. } => out.push(pool_argmax(
                &layer.kind,
                x,
                &net.shapes[l],
                &net.shapes[l + 1],
            )),
            _ => {}
        }
    }
    out
}

fn logit_and_pattern(net: &Network, x: Vec<f64>, target: usize) -> (f64, Vec<Vec<usize>>) {
    let outputs = net.run(0, x.clone());
    let p = pattern(net, &x, &outputs);
    (outputs[outputs.len() - 2][target], p)
}

pub fn finite_diff_check(net: &Network, input: &Tensor, target: usize, h: f64) -> Result<GradCheckReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Parameter(format!("step h must be positive, got {h}")));
    }
    let (_, trace) = net.forward(input)?;
    let analytic = backprop_gradient(net, &trace, target)?;
    let analytic = analytic.as_f32()?;

    let f32_pattern = pattern(net, trace.input(), &trace.outputs);
    let x: Vec<f64> = trace.input().iter().map(|&v| f64::from(v)).collect();
    let (_, base) = logit_and_pattern(net, x.clone(), target);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
    };
    if base != f32_pattern {
        // the f32 pass sits on a kink the f64 pass resolves differently
        report.excluded = x.len();
        return Ok(report);
    }
    for j in 0..x.len() {
        let mut plus = x.clone();
        plus[j] += h;
        let mut minus = x.clone();
        minus[j] -= h;
        let (fp, pp) = logit_and_pattern(net, plus, target);
        let (fm, pm) = logit_and_pattern(net, minus, target);
        if pp != base || pm != base {
            report.excluded += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = f64::from(analytic[j]);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / denom);
        report.checked += 1;
    }
    Ok(report)
}
