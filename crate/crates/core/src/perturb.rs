//! Modifying tap-layer representations and measuring how the target class
//! probability responds.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::net::Network;
use crate::rng::{derive, SeededRng};
use crate::sevec::{mask_from_sevec, Mask, SemanticVector, DEFAULT_MASK_THRESHOLD};
use crate::store::ConceptStore;

/// Sets `rep[idx]` to 1.5 times the largest entry of `rep`.
pub fn boost_neuron(rep: &[f32], idx: usize) -> Result<Vec<f32>> {
    if idx >= rep.len() {
        return Err(Error::Index {
            index: idx,
            len: rep.len(),
        });
    }
    let max = rep.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out = rep.to_vec();
    out[idx] = 1.5 * max;
    Ok(out)
}

pub fn apply_mask(rep: &[f32], mask: &Mask) -> Result<Vec<f32>> {
    if rep.len() != mask.len() {
        return Err(Error::Dimension {
            expected: rep.len(),
            got: mask.len(),
        });
    }
    Ok(rep
        .iter()
        .zip(mask.bits())
        .map(|(&x, &keep)| if keep { x } else { 0.0 })
        .collect())
}

/// Fisher-Yates shuffle of the mask positions.
pub fn permute_mask_with(mask: &Mask, rng: &mut SeededRng) -> Mask {
    let mut bits = mask.bits().to_vec();
    bits.shuffle(rng);
    Mask::new(bits)
}

pub fn permute_mask(mask: &Mask, seed: u64) -> Mask {
    permute_mask_with(mask, &mut crate::rng::seeded(seed))
}

/// Everything a modification may look at for one sample.
pub struct SampleContext<'a> {
    pub rep: &'a [f32],
    pub concept: &'a SemanticVector,
    pub mask: &'a Mask,
    /// Stream private to this sample and modification.
    pub rng: SeededRng,
}

pub trait Modification: Send + Sync {
    fn name(&self) -> &'static str;

    fn apply(&self, ctx: &mut SampleContext<'_>) -> Result<Vec<f32>>;
}

/// Boosts the unit the concept activates most often.
pub struct SingleNeuron;

impl Modification for SingleNeuron {
    fn name(&self) -> &'static str {
        "single_neuron"
    }

    fn apply(&self, ctx: &mut SampleContext<'_>) -> Result<Vec<f32>> {
        let idx = ctx
            .concept
            .rate
            .iter()
            .enumerate()
            .fold(0, |best, (j, &r)| if r > ctx.concept.rate[best] { j } else { best });
        boost_neuron(ctx.rep, idx)
    }
}

/// Boosts a uniformly drawn unit.
pub struct RandomNeuron;

impl Modification for RandomNeuron {
    fn name(&self) -> &'static str {
        "random_neuron"
    }

    fn apply(&self, ctx: &mut SampleContext<'_>) -> Result<Vec<f32>> {
        let idx = ctx.rng.random_range(0..ctx.rep.len());
        boost_neuron(ctx.rep, idx)
    }
}

/// Keeps only the concept's units.
pub struct SevecMask;

impl Modification for SevecMask {
    fn name(&self) -> &'static str {
        "sevec_mask"
    }

    fn apply(&self, ctx: &mut SampleContext<'_>) -> Result<Vec<f32>> {
        apply_mask(ctx.rep, ctx.mask)
    }
}

/// Keeps as many units as the concept mask, at shuffled positions.
pub struct PermutedMask;

impl Modification for PermutedMask {
    fn name(&self) -> &'static str {
        "permuted_mask"
    }

    fn apply(&self, ctx: &mut SampleContext<'_>) -> Result<Vec<f32>> {
        let shuffled = permute_mask_with(ctx.mask, &mut ctx.rng);
        apply_mask(ctx.rep, &shuffled)
    }
}

/// Modifications in registration order.
pub struct ModificationRegistry {
    modes: Vec<Box<dyn Modification>>,
}

impl ModificationRegistry {
    pub fn empty() -> Self {
        ModificationRegistry { modes: Vec::new() }
    }

    pub fn with_builtin() -> Self {
        let mut r = ModificationRegistry::empty();
        r.register(Box::new(SingleNeuron));
        r.register(Box::new(RandomNeuron));
        r.register(Box::new(SevecMask));
        r.register(Box::new(PermutedMask));
        r
    }

    /// Adds `mode`, replacing one of the same name in place.
    pub fn register(&mut self, mode: Box<dyn Modification>) {
        match self.modes.iter().position(|m| m.name() == mode.name()) {
            Some(i) => self.modes[i] = mode,
            None => self.modes.push(mode),
        }
    }

    pub fn get(&self, name: &str) -> Option<&dyn Modification> {
        self.modes.iter().find(|m| m.name() == name).map(|m| m.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.modes.iter().map(|m| m.name())
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

impl Default for ModificationRegistry {
    fn default() -> Self {
        ModificationRegistry::with_builtin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbConfig {
    pub threshold: f32,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            threshold: DEFAULT_MASK_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    /// `(mode, mean signed change of the target probability)`.
    pub modes: Vec<(String, f64)>,
    pub sample_count: usize,
    pub seed: u64,
}

impl PerturbationReport {
    pub fn mean(&self, mode: &str) -> Option<f64> {
        self.modes.iter().find(|(m, _)| m == mode).map(|&(_, d)| d)
    }

    pub fn to_text(&self) -> String {
        let width = self.modes.iter().map(|(m, _)| m.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:>12}\n", "mode", "mean_delta");
        for (m, d) in &self.modes {
            let _ = writeln!(out, "{m:<width$}  {d:>12.6}");
        }
        let _ = writeln!(out, "samples = {}, seed = {}", self.sample_count, self.seed);
        out
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (m, d) in &self.modes {
            let _ = writeln!(out, "{m} = {d}");
        }
        let _ = writeln!(out, "sample_count = {}", self.sample_count);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }
}

/// For every labelled row of `fs` (tap-layer representations), applies each
/// modification and averages `P(target | modified) - P(target | original)`.
/// The concept for a row is its label; the target output is the network
/// class of that label.
pub fn perturbation_study(
    net: &Network,
    fs: &FeatureSet,
    store: &ConceptStore,
    config: &PerturbConfig,
) -> Result<PerturbationReport> {
    perturbation_study_with(net, fs, store, config, &ModificationRegistry::with_builtin())
}

pub fn perturbation_study_with(
    net: &Network,
    fs: &FeatureSet,
    store: &ConceptStore,
    config: &PerturbConfig,
    registry: &ModificationRegistry,
) -> Result<PerturbationReport> {
    if fs.is_empty() {
        return Err(Error::EmptyInput("no samples to perturb".into()));
    }
    if registry.is_empty() {
        return Err(Error::Parameter("no modifications registered".into()));
    }
    if fs.dim() != net.tap_width() {
        return Err(Error::Dimension {
            expected: net.tap_width(),
            got: fs.dim(),
        });
    }
    let mut sums = vec![0.0f64; registry.len()];
    for i in 0..fs.len() {
        let label = fs.label(i).ok_or_else(|| {
            Error::Parameter(format!("sample '{}' has no label", fs.sample_id(i)))
        })?;
        let concept = store.require(label)?;
        let mask = mask_from_sevec(concept, config.threshold)?;
        let target = net
            .class_index(label)
            .ok_or_else(|| Error::Parameter(format!("label '{label}' is not a network class")))?;
        let rep = fs.row(i);
        let base = f64::from(net.forward_from_slice(rep)[target]);
        for (k, mode) in registry.modes.iter().enumerate() {
            let mut ctx = SampleContext {
                rep,
                concept,
                mask: &mask,
                rng: derive(config.seed, (i * registry.len() + k) as u64),
            };
            let modified = mode.apply(&mut ctx)?;
            if modified.len() != rep.len() {
                return Err(Error::Dimension {
                    expected: rep.len(),
                    got: modified.len(),
                });
            }
            sums[k] += f64::from(net.forward_from_slice(&modified)[target]) - base;
        }
    }
    Ok(PerturbationReport {
        modes: registry
            .names()
            .zip(sums)
            .map(|(n, s)| (n.to_string(), s / fs.len() as f64))
            .collect(),
        sample_count: fs.len(),
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Layer, LayerKind};
    use proptest::prelude::*;

    #[test]
    fn boost_examples() {
        let b = boost_neuron(&[0.2, 0.8, 0.0], 0).unwrap();
        assert!((b[0] - 1.2).abs() < 1e-6);
        assert_eq!(&b[1..], &[0.8, 0.0]);
        assert_eq!(boost_neuron(&[0.0; 3], 1).unwrap(), vec![0.0; 3]);
        assert_eq!(boost_neuron(&[1.0, 2.0], 1).unwrap(), vec![1.0, 3.0]);
        assert!(matches!(boost_neuron(&[1.0], 1), Err(Error::Index { .. })));
    }

    #[test]
    fn mask_examples() {
        let rep = [1.0, 2.0, 3.0];
        assert_eq!(apply_mask(&rep, &Mask::ones(3)).unwrap(), rep.to_vec());
        assert_eq!(apply_mask(&rep, &Mask::new(vec![false; 3])).unwrap(), vec![0.0; 3]);
        assert_eq!(
            apply_mask(&rep, &Mask::new(vec![true, false, true])).unwrap(),
            vec![1.0, 0.0, 3.0]
        );
        assert!(apply_mask(&rep, &Mask::ones(2)).is_err());
    }

    #[test]
    fn permutation_examples() {
        assert_eq!(permute_mask(&Mask::ones(5), 3), Mask::ones(5));
        let m = Mask::new(vec![true, false, false, true, true, false, false]);
        let p = permute_mask(&m, 8);
        assert_eq!(p.popcount(), 3);
        assert_eq!(p, permute_mask(&m, 8));
    }

    fn softmax_head(width: usize) -> Network {
        Network::new(
            vec![
                Layer::new("relu", LayerKind::Relu),
                Layer::new("softmax", LayerKind::Softmax),
            ],
            vec![width],
            0,
        )
        .unwrap()
    }

    #[test]
    fn softmax_head_deltas() {
        let net = softmax_head(4);
        let fs = FeatureSet::from_rows(&[vec![0.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]])
            .unwrap()
            .with_labels(vec![Some("0".into()), Some("0".into())])
            .unwrap();
        // all rates above threshold: the concept mask keeps every unit
        let v = SemanticVector::new("0", vec![0.5; 4], vec![0.9, 0.8, 0.7, 0.6], 2).unwrap();
        let store = ConceptStore::from_vectors([v]).unwrap();
        let r = perturbation_study(&net, &fs, &store, &PerturbConfig::default()).unwrap();
        assert_eq!(r.mean("sevec_mask"), Some(0.0));
        assert_eq!(r.mean("permuted_mask"), Some(0.0));
        // sample 0: boosting a zero rep changes nothing; sample 1: unit 0
        // goes 1 -> 1.5
        let p = |x: f64| x.exp() / (x.exp() + 3.0);
        let expected = (0.0 + (p(1.5) - p(1.0))) / 2.0;
        assert!((r.mean("single_neuron").unwrap() - expected).abs() < 1e-7);
        assert_eq!(r.sample_count, 2);
        assert_eq!(r, perturbation_study(&net, &fs, &store, &PerturbConfig::default()).unwrap());
    }

    #[test]
    fn missing_concept_is_store_error() {
        let net = softmax_head(2);
        let fs = FeatureSet::from_rows(&[vec![1.0, 0.0]])
            .unwrap()
            .with_labels(vec![Some("1".into())])
            .unwrap();
        let store = ConceptStore::from_vectors([SemanticVector::new("0", vec![1.0, 0.0], vec![1.0, 0.0], 1).unwrap()]).unwrap();
        assert!(matches!(
            perturbation_study(&net, &fs, &store, &PerturbConfig::default()),
            Err(Error::Store(_))
        ));
    }

    #[test]
    fn report_formats() {
        let r = PerturbationReport {
            modes: vec![("single_neuron".into(), 0.25), ("sevec_mask".into(), -0.5)],
            sample_count: 3,
            seed: 7,
        };
        assert_eq!(
            r.to_key_values(),
            "single_neuron = 0.25\nsevec_mask = -0.5\nsample_count = 3\nseed = 7\n"
        );
        assert!(r.to_text().contains("sevec_mask        -0.500000"), "{}", r.to_text());
    }

    proptest! {
        #[test]
        fn mask_idempotent_and_boost_touches_one(
            rep in prop::collection::vec(-5.0f32..5.0, 1..20),
            bits in prop::collection::vec(any::<bool>(), 20),
            idx in 0usize..20,
        ) {
            let n = rep.len();
            let mask = Mask::new(bits[..n].to_vec());
            let once = apply_mask(&rep, &mask).unwrap();
            prop_assert_eq!(apply_mask(&once, &mask).unwrap(), once);
            let idx = idx % n;
            let b = boost_neuron(&rep, idx).unwrap();
            for j in 0..n {
                if j != idx {
                    prop_assert_eq!(b[j].to_bits(), rep[j].to_bits());
                }
            }
        }
    }
}
