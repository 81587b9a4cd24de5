//! Fault campaigns: per-run records, outcome classification and count
//! aggregation.
//!
//! Weight campaigns draw one plan per epoch and apply it to every image;
//! neuron campaigns draw a fresh plan per (epoch, image). Plans are keyed by
//! `(master seed, kind, epoch, image)` and never depend on the policy, so
//! campaigns with different policies see identical faults.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bits::BitIndex;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fault::{
    faulted_copy, sample_faults, FaultKind, FaultPlan, NeuronFaultHook, SamplingOptions,
};
use crate::metrics::DerivedMetrics;
use crate::nn::{forward, predict, InferenceOutcome, LayerHook, ModelGraph};
use crate::protection::{BoundsProfile, Policy, ProtectionHook};
use crate::rng::{Purpose, StreamKey};
use crate::tensor::NonFinite;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub policy: Policy,
    pub kind: FaultKind,
    /// Faults per plan.
    pub k: usize,
    pub bits: Vec<BitIndex>,
    pub epochs: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub sampling: SamplingOptions,
}

impl CampaignConfig {
    pub fn plan_key(&self, epoch: u64, image: usize) -> StreamKey {
        match self.kind {
            FaultKind::Weight => StreamKey::new(self.master_seed, Purpose::WeightFaults, epoch, 0),
            FaultKind::Neuron => {
                StreamKey::new(self.master_seed, Purpose::NeuronFaults, epoch, image as u64)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RunOutcome {
    Prediction { class: usize },
    Due { layer: usize, kind: NonFinite },
}

/// One faulted inference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: u64,
    /// Index into the campaign dataset.
    pub image: usize,
    pub label: usize,
    pub baseline: usize,
    pub outcome: RunOutcome,
    pub any_oob: bool,
    /// Out-of-bound element counts per protection point.
    pub oob_counts: Vec<usize>,
    /// Flipped bit positions of the plan in effect.
    pub bits: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Correct,
    Sdc,
    Due,
}

pub fn classify_outcome(r: &RunRecord) -> Outcome {
    match r.outcome {
        RunOutcome::Due { .. } => Outcome::Due,
        RunOutcome::Prediction { class } if class != r.baseline => Outcome::Sdc,
        RunOutcome::Prediction { .. } => Outcome::Correct,
    }
}

/// Per-bit outcome counts, indexed by bit position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitCounts {
    pub runs: Vec<u64>,
    pub sdc: Vec<u64>,
    pub due: Vec<u64>,
}

impl BitCounts {
    fn new() -> Self {
        BitCounts {
            runs: vec![0; 32],
            sdc: vec![0; 32],
            due: vec![0; 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub label: usize,
    pub predicted: usize,
    pub count: u64,
}

/// Raw event counts. Merging is associative and commutative, so the totals
/// do not depend on how runs were split between workers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignCounts {
    pub run_count: u64,
    pub correct_count: u64,
    pub sdc_count: u64,
    pub due_count: u64,
    pub sdc_oob: u64,
    pub sdc_ib: u64,
    pub cl_oob: u64,
    pub cl_ib: u64,
    pub due_oob: u64,
    pub due_ib: u64,
    /// Runs with at least one out-of-bound element at each protection point.
    pub point_oob_runs: Vec<u64>,
    /// Only for single-fault campaigns.
    pub bits: Option<BitCounts>,
    /// SDC runs by (label, prediction), sorted.
    pub confusion: Vec<ConfusionEntry>,
}

impl CampaignCounts {
    pub fn new(protection_points: usize, track_bits: bool) -> Self {
        CampaignCounts {
            run_count: 0,
            correct_count: 0,
            sdc_count: 0,
            due_count: 0,
            sdc_oob: 0,
            sdc_ib: 0,
            cl_oob: 0,
            cl_ib: 0,
            due_oob: 0,
            due_ib: 0,
            point_oob_runs: vec![0; protection_points],
            bits: track_bits.then(BitCounts::new),
            confusion: Vec::new(),
        }
    }

    fn add_confusion(&mut self, label: usize, predicted: usize, count: u64) {
        match self
            .confusion
            .binary_search_by_key(&(label, predicted), |e| (e.label, e.predicted))
        {
            Ok(i) => self.confusion[i].count += count,
            Err(i) => self.confusion.insert(
                i,
                ConfusionEntry {
                    label,
                    predicted,
                    count,
                },
            ),
        }
    }

    pub fn record(&mut self, r: &RunRecord) {
        let outcome = classify_outcome(r);
        self.run_count += 1;
        let (both, slot) = match (outcome, r.any_oob) {
            (Outcome::Correct, true) => (&mut self.correct_count, &mut self.cl_oob),
            (Outcome::Correct, false) => (&mut self.correct_count, &mut self.cl_ib),
            (Outcome::Sdc, true) => (&mut self.sdc_count, &mut self.sdc_oob),
            (Outcome::Sdc, false) => (&mut self.sdc_count, &mut self.sdc_ib),
            (Outcome::Due, true) => (&mut self.due_count, &mut self.due_oob),
            (Outcome::Due, false) => (&mut self.due_count, &mut self.due_ib),
        };
        *both += 1;
        *slot += 1;
        for (acc, &n) in self.point_oob_runs.iter_mut().zip(&r.oob_counts) {
            *acc += u64::from(n > 0);
        }
        if let (Some(bits), [b]) = (&mut self.bits, r.bits.as_slice()) {
            let b = usize::from(*b);
            bits.runs[b] += 1;
            match outcome {
                Outcome::Sdc => bits.sdc[b] += 1,
                Outcome::Due => bits.due[b] += 1,
                Outcome::Correct => {}
            }
        }
        if let (Outcome::Sdc, RunOutcome::Prediction { class }) = (outcome, &r.outcome) {
            self.add_confusion(r.label, *class, 1);
        }
    }

    pub fn merge(&mut self, other: &CampaignCounts) {
        self.run_count += other.run_count;
        self.correct_count += other.correct_count;
        self.sdc_count += other.sdc_count;
        self.due_count += other.due_count;
        self.sdc_oob += other.sdc_oob;
        self.sdc_ib += other.sdc_ib;
        self.cl_oob += other.cl_oob;
        self.cl_ib += other.cl_ib;
        self.due_oob += other.due_oob;
        self.due_ib += other.due_ib;
        for (a, b) in self.point_oob_runs.iter_mut().zip(&other.point_oob_runs) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (&mut self.bits, &other.bits) {
            for (x, y) in [(&mut a.runs, &b.runs), (&mut a.sdc, &b.sdc), (&mut a.due, &b.due)] {
                x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
            }
        }
        for e in &other.confusion {
            self.add_confusion(e.label, e.predicted, e.count);
        }
    }

    /// Partition invariants between the totals and the joint counts.
    pub fn check(&self) -> Result<()> {
        let joint = self.sdc_oob + self.sdc_ib + self.cl_oob + self.cl_ib + self.due_oob + self.due_ib;
        let checks = [
            (self.correct_count + self.sdc_count + self.due_count == self.run_count, "correct + sdc + due = runs"),
            (joint == self.run_count, "joint counts partition runs"),
            (self.sdc_oob + self.sdc_ib == self.sdc_count, "sdc_oob + sdc_ib = sdc"),
            (self.cl_oob + self.cl_ib == self.correct_count, "cl_oob + cl_ib = correct"),
            (self.due_oob + self.due_ib == self.due_count, "due_oob + due_ib = due"),
            (
                self.confusion.iter().map(|e| e.count).sum::<u64>() == self.sdc_count,
                "confusion entries sum to sdc",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, what)) => Err(Error::Config(alloc::format!("inconsistent counts: {what}"))),
            None => Ok(()),
        }
    }
}

/// Persistable campaign result: configuration, raw counts and derived rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub dataset_id: String,
    pub class_names: Vec<String>,
    pub protection_points: Vec<usize>,
    pub image_count: usize,
    pub counts: CampaignCounts,
    pub derived: DerivedMetrics,
}

impl CampaignReport {
    pub fn new(
        config: CampaignConfig,
        dataset_id: String,
        class_names: Vec<String>,
        protection_points: Vec<usize>,
        image_count: usize,
        counts: CampaignCounts,
    ) -> Self {
        let derived = DerivedMetrics::from_counts(config.k, &counts);
        CampaignReport {
            config,
            dataset_id,
            class_names,
            protection_points,
            image_count,
            counts,
            derived,
        }
    }

    /// Counts are consistent and the stored derived block equals a recomputation.
    pub fn verify(&self) -> Result<()> {
        self.counts.check()?;
        if self.counts.point_oob_runs.len() != self.protection_points.len() {
            return Err(Error::Config(
                "point_oob_runs length differs from protection points".into(),
            ));
        }
        if DerivedMetrics::from_counts(self.config.k, &self.counts) != self.derived {
            return Err(Error::Config(
                "derived metrics do not match the raw counts".into(),
            ));
        }
        Ok(())
    }
}

/// A prepared campaign over the baseline-correct subset of a dataset.
pub struct Campaign<'a> {
    model: &'a ModelGraph,
    dataset: &'a Dataset,
    subset: Vec<usize>,
    config: CampaignConfig,
    protection: ProtectionHook,
}

impl<'a> Campaign<'a> {
    /// `subset` indexes `dataset`; every image must be correctly classified fault-free.
    pub fn new(
        model: &'a ModelGraph,
        bounds: &BoundsProfile,
        dataset: &'a Dataset,
        subset: Vec<usize>,
        config: CampaignConfig,
    ) -> Result<Self> {
        bounds.validate_for(model)?;
        if subset.is_empty() {
            return Err(Error::Config("campaign image subset is empty".into()));
        }
        if config.k > 0 && config.bits.is_empty() {
            return Err(Error::Config("empty bit range".into()));
        }
        if dataset.num_classes() != model.num_classes() {
            return Err(Error::Config("dataset and model class counts differ".into()));
        }
        for &i in &subset {
            let img = dataset.images.get(i).ok_or_else(|| {
                Error::Config(alloc::format!("subset index {i} outside dataset"))
            })?;
            let ok = match forward(model, img, &mut [])? {
                InferenceOutcome::Scores(s) => predict(&s)? == dataset.labels[i],
                InferenceOutcome::Due { .. } => false,
            };
            if !ok {
                return Err(Error::Config(alloc::format!(
                    "image {i} is not correctly classified without faults"
                )));
            }
        }
        let protection = ProtectionHook::new(model, bounds, config.policy)?;
        Ok(Campaign {
            model,
            dataset,
            subset,
            config,
            protection,
        })
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn plan(&self, epoch: u64, image: usize) -> Result<FaultPlan> {
        if self.config.k == 0 {
            return Ok(FaultPlan::empty(self.config.kind));
        }
        sample_faults(
            self.model,
            self.config.kind,
            self.config.k,
            &self.config.bits,
            self.config.plan_key(epoch, image),
            self.config.sampling,
        )
    }

    fn run_one(&self, model: &ModelGraph, epoch: u64, image: usize, plan: &FaultPlan) -> Result<RunRecord> {
        let mut protection = self.protection.clone();
        protection.reset();
        let input = &self.dataset.images[image];
        let outcome = if plan.kind == FaultKind::Neuron && !plan.specs.is_empty() {
            let mut neuron = NeuronFaultHook::new(model, plan)?;
            let hooks: &mut [&mut dyn LayerHook] = &mut [&mut neuron, &mut protection];
            forward(model, input, hooks)?
        } else {
            forward(model, input, &mut [&mut protection])?
        };
        let label = self.dataset.labels[image];
        Ok(RunRecord {
            epoch,
            image,
            label,
            baseline: label,
            outcome: match outcome {
                InferenceOutcome::Scores(s) => RunOutcome::Prediction {
                    class: predict(&s)?,
                },
                InferenceOutcome::Due { layer, kind, .. } => RunOutcome::Due { layer, kind },
            },
            any_oob: protection.any_oob(),
            oob_counts: protection.events().iter().map(|e| e.count).collect(),
            bits: plan.bits().map(u8::from).collect(),
        })
    }

    /// All runs of one epoch, in subset order.
    pub fn run_epoch(&self, epoch: u64) -> Result<Vec<RunRecord>> {
        match self.config.kind {
            FaultKind::Weight => {
                let plan = self.plan(epoch, 0)?;
                self.run_plan(epoch, &plan)
            }
            FaultKind::Neuron => self
                .subset
                .iter()
                .map(|&i| {
                    let plan = self.plan(epoch, i)?;
                    self.run_one(self.model, epoch, i, &plan)
                })
                .collect(),
        }
    }

    /// Apply one given plan to every image of the subset.
    pub fn run_plan(&self, epoch: u64, plan: &FaultPlan) -> Result<Vec<RunRecord>> {
        let faulted;
        let model = if plan.kind == FaultKind::Weight && !plan.specs.is_empty() {
            faulted = faulted_copy(self.model, plan)?;
            &faulted
        } else {
            self.model
        };
        self.subset
            .iter()
            .map(|&i| self.run_one(model, epoch, i, plan))
            .collect()
    }

    pub fn empty_counts(&self) -> CampaignCounts {
        CampaignCounts::new(self.model.protection_points().len(), self.config.k == 1)
    }

    pub fn count(&self, records: &[RunRecord]) -> CampaignCounts {
        let mut c = self.empty_counts();
        records.iter().for_each(|r| c.record(r));
        c
    }

    pub fn report(&self, counts: CampaignCounts) -> CampaignReport {
        CampaignReport::new(
            self.config.clone(),
            self.dataset.id.clone(),
            self.model.class_names().to_vec(),
            self.model.protection_points().to_vec(),
            self.subset.len(),
            counts,
        )
    }

    /// Every epoch in order on the calling thread.
    pub fn run(&self) -> Result<CampaignReport> {
        let mut counts = self.empty_counts();
        for epoch in 0..self.config.epochs as u64 {
            counts.merge(&self.count(&self.run_epoch(epoch)?));
        }
        Ok(self.report(counts))
    }
}
