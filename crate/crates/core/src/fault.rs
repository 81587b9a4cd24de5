//! Bit-flip fault sampling and injection.
//!
//! Weight faults flip bits of stored conv2d/linear weights and stay active for
//! a whole epoch. Neuron faults flip bits of a conv2d/linear output during a
//! single inference.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{bit_state, flip_bit, BitIndex};
use crate::error::{Error, Result};
use crate::nn::{LayerHook, LayerKind, ModelGraph, ParamSlot};
use crate::rng::StreamKey;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    Weight,
    Neuron,
}

impl FaultKind {
    pub fn name(self) -> &'static str {
        match self {
            FaultKind::Weight => "weight",
            FaultKind::Neuron => "neuron",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight" => Ok(FaultKind::Weight),
            "neuron" => Ok(FaultKind::Neuron),
            _ => Err(Error::Config(alloc::format!("unknown fault kind {s:?}"))),
        }
    }
}

/// One bit flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub layer: usize,
    /// Parameter tensor for weight faults; absent for neuron faults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<ParamSlot>,
    pub element: usize,
    pub bit: BitIndex,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanProvenance {
    pub master_seed: u64,
    pub epoch: u64,
    /// Image id for neuron plans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<u64>,
}

/// A set of distinct faults of one kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub kind: FaultKind,
    pub specs: Vec<FaultSpec>,
    pub provenance: PlanProvenance,
}

impl FaultPlan {
    pub fn empty(kind: FaultKind) -> Self {
        FaultPlan {
            kind,
            specs: Vec::new(),
            provenance: PlanProvenance {
                master_seed: 0,
                epoch: 0,
                image: None,
            },
        }
    }

    pub fn bits(&self) -> impl Iterator<Item = BitIndex> + '_ {
        self.specs.iter().map(|s| s.bit)
    }

    /// Checks kinds, targets and distinctness against `model`.
    pub fn validate(&self, model: &ModelGraph) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, s) in self.specs.iter().enumerate() {
            if s.kind != self.kind {
                return Err(Error::Config(alloc::format!(
                    "specs[{i}] is a {} fault in a {} plan",
                    s.kind,
                    self.kind
                )));
            }
            let layer = model.layers().get(s.layer).ok_or_else(|| {
                Error::Config(alloc::format!("specs[{i}]: no layer {}", s.layer))
            })?;
            if !layer.kind.is_parameterized() {
                return Err(Error::Config(alloc::format!(
                    "specs[{i}]: layer {} ({}) takes no faults",
                    s.layer,
                    layer.kind.name()
                )));
            }
            let len = match s.kind {
                FaultKind::Weight => {
                    let slot = s.slot.ok_or_else(|| {
                        Error::Config(alloc::format!("specs[{i}]: weight fault without slot"))
                    })?;
                    layer
                        .param(slot)
                        .ok_or_else(|| {
                            Error::Config(alloc::format!(
                                "specs[{i}]: layer {} has no {slot:?}",
                                s.layer
                            ))
                        })?
                        .len()
                }
                FaultKind::Neuron => model.output_len(s.layer),
            };
            if s.element >= len {
                return Err(Error::Config(alloc::format!(
                    "specs[{i}]: element {} out of range ({len})",
                    s.element
                )));
            }
            if !seen.insert((s.layer, s.slot, s.element, s.bit)) {
                return Err(Error::Config(alloc::format!("specs[{i}] is a duplicate")));
            }
        }
        Ok(())
    }
}

/// How fault sites are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteSampling {
    /// Every eligible scalar in the model equally likely.
    #[default]
    Element,
    /// Eligible layer uniformly, then a scalar within it.
    Layer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub sites: SiteSampling,
    /// Also expose bias tensors to weight faults.
    pub include_bias: bool,
}

/// A contiguous block of fault sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SiteGroup {
    pub layer: usize,
    pub slot: Option<ParamSlot>,
    pub len: usize,
}

/// Eligible targets for `kind` in model order.
pub fn eligible_sites(model: &ModelGraph, kind: FaultKind, include_bias: bool) -> Vec<SiteGroup> {
    let mut out = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        if !layer.kind.is_parameterized() {
            continue;
        }
        match kind {
            FaultKind::Neuron => out.push(SiteGroup {
                layer: i,
                slot: None,
                len: model.output_len(i),
            }),
            FaultKind::Weight => {
                for (slot, shape) in layer.kind.param_shapes() {
                    if slot == ParamSlot::Weight || (include_bias && slot == ParamSlot::Bias) {
                        out.push(SiteGroup {
                            layer: i,
                            slot: Some(slot),
                            len: shape.iter().product(),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Draw `k` distinct faults. `bits` must be non-empty; duplicates are ignored.
pub fn sample_faults(
    model: &ModelGraph,
    kind: FaultKind,
    k: usize,
    bits: &[BitIndex],
    key: StreamKey,
    options: SamplingOptions,
) -> Result<FaultPlan> {
    let bits: Vec<BitIndex> = bits.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if bits.is_empty() {
        return Err(Error::Config("empty bit range".into()));
    }
    let groups = eligible_sites(model, kind, options.include_bias);
    let total: usize = groups.iter().map(|g| g.len).sum();
    if k > total.saturating_mul(bits.len()) {
        return Err(Error::Config(alloc::format!(
            "{k} faults requested but only {} distinct {kind} sites exist",
            total * bits.len()
        )));
    }
    let mut rng = key.rng();
    let mut seen = BTreeSet::new();
    let mut specs = Vec::with_capacity(k);
    while specs.len() < k {
        let (g, element) = match options.sites {
            SiteSampling::Element => {
                let mut u = rng.gen_range(0..total);
                let mut gi = 0;
                while u >= groups[gi].len {
                    u -= groups[gi].len;
                    gi += 1;
                }
                (&groups[gi], u)
            }
            SiteSampling::Layer => {
                let layers: Vec<usize> = groups
                    .iter()
                    .map(|g| g.layer)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let layer = layers[rng.gen_range(0..layers.len())];
                let in_layer: Vec<&SiteGroup> = groups.iter().filter(|g| g.layer == layer).collect();
                let n: usize = in_layer.iter().map(|g| g.len).sum();
                let mut u = rng.gen_range(0..n);
                let mut gi = 0;
                while u >= in_layer[gi].len {
                    u -= in_layer[gi].len;
                    gi += 1;
                }
                (in_layer[gi], u)
            }
        };
        let bit = bits[rng.gen_range(0..bits.len())];
        if seen.insert((g.layer, g.slot, element, bit)) {
            specs.push(FaultSpec {
                kind,
                layer: g.layer,
                slot: g.slot,
                element,
                bit,
            });
        }
    }
    Ok(FaultPlan {
        kind,
        specs,
        provenance: PlanProvenance {
            master_seed: key.master_seed,
            epoch: key.epoch,
            image: (kind == FaultKind::Neuron).then_some(key.item),
        },
    })
}

/// Undo information for [`apply_weight_faults`].
#[must_use = "faults stay in the model until reverted"]
#[derive(Debug)]
pub struct RevertToken {
    specs: Vec<FaultSpec>,
}

impl RevertToken {
    pub fn revert(self, model: &mut ModelGraph) {
        flip_all(model, &self.specs);
    }
}

fn flip_all(model: &mut ModelGraph, specs: &[FaultSpec]) {
    for s in specs {
        let slot = s.slot.unwrap_or(ParamSlot::Weight);
        let t = model
            .param_mut(s.layer, slot)
            .expect("validated fault target");
        t[s.element] = flip_bit(t[s.element], s.bit);
    }
}

/// Flip the planned weight bits in place.
pub fn apply_weight_faults(model: &mut ModelGraph, plan: &FaultPlan) -> Result<RevertToken> {
    if plan.kind != FaultKind::Weight {
        return Err(Error::Config("neuron plan passed as weight faults".into()));
    }
    plan.validate(model)?;
    flip_all(model, &plan.specs);
    Ok(RevertToken {
        specs: plan.specs.clone(),
    })
}

/// Faulted copy; `model` is left untouched.
pub fn faulted_copy(model: &ModelGraph, plan: &FaultPlan) -> Result<ModelGraph> {
    let mut m = model.clone();
    let _ = apply_weight_faults(&mut m, plan)?;
    Ok(m)
}

/// Flips planned bits of layer outputs once per inference.
#[derive(Clone, Debug)]
pub struct NeuronFaultHook {
    specs: Vec<FaultSpec>,
}

impl NeuronFaultHook {
    pub fn new(model: &ModelGraph, plan: &FaultPlan) -> Result<Self> {
        if plan.kind != FaultKind::Neuron {
            return Err(Error::Config("weight plan passed as neuron faults".into()));
        }
        plan.validate(model)?;
        Ok(NeuronFaultHook {
            specs: plan.specs.clone(),
        })
    }
}

impl LayerHook for NeuronFaultHook {
    fn after_layer(&mut self, layer: usize, output: &mut Tensor) {
        for s in self.specs.iter().filter(|s| s.layer == layer) {
            output[s.element] = flip_bit(output[s.element], s.bit);
        }
    }
}

/// Fraction of conv2d weights with each bit set.
pub fn weight_bit_histogram(model: &ModelGraph, bits: &[BitIndex]) -> Result<Vec<(BitIndex, f64)>> {
    let weights: Vec<f32> = model
        .layers()
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Conv2d { .. }))
        .filter_map(|l| l.param(ParamSlot::Weight))
        .flat_map(|t| t.data().iter().copied())
        .collect();
    if weights.is_empty() {
        return Err(Error::Config("model has no conv2d weights".into()));
    }
    let n = weights.len() as f64;
    Ok(bits
        .iter()
        .map(|&b| {
            let ones = weights.iter().filter(|&&w| bit_state(w, b) == 1).count();
            (b, ones as f64 / n)
        })
        .collect())
}
