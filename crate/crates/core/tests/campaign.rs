use faultrange_core::bits::BitIndex;
use faultrange_core::campaign::{classify_outcome, Outcome, RunOutcome};
use faultrange_core::data::{generate_shapes, Dataset, ShapesConfig};
use faultrange_core::fault::SamplingOptions;
use faultrange_core::protection::extract_bounds;
use faultrange_core::train::{evaluate_accuracy, init_fixture};
use faultrange_core::{
    BoundsProfile, Campaign, CampaignConfig, CampaignCounts, FaultKind, ModelGraph, NonFinite, Policy, RunRecord,
};
use proptest::prelude::*;

struct Setup {
    model: ModelGraph,
    data: Dataset,
    bounds: BoundsProfile,
    subset: Vec<usize>,
}

fn setup() -> Setup {
    let data = generate_shapes(&ShapesConfig { per_class: 6, ..Default::default() }).unwrap();
    let model = init_fixture(data.class_names.clone(), 3).unwrap();
    let bounds = extract_bounds(&model, &data.images, &data.id).unwrap();
    let subset = evaluate_accuracy(&model, &data).unwrap().correct_indices;
    assert!(!subset.is_empty());
    Setup { model, data, bounds, subset }
}

fn config(policy: Policy, kind: FaultKind, k: usize, epochs: usize) -> CampaignConfig {
    CampaignConfig {
        policy,
        kind,
        k,
        bits: (0..=8).map(|b| BitIndex::new(b).unwrap()).collect(),
        epochs,
        master_seed: 5,
        sampling: SamplingOptions::default(),
    }
}

#[test]
fn no_faults_means_no_events_under_any_policy() {
    let s = setup();
    for policy in Policy::ALL {
        for kind in [FaultKind::Weight, FaultKind::Neuron] {
            let c = Campaign::new(&s.model, &s.bounds, &s.data, s.subset.clone(), config(policy, kind, 0, 3)).unwrap();
            let r = c.run().unwrap();
            assert_eq!(r.counts.run_count, 3 * s.subset.len() as u64);
            assert_eq!((r.counts.sdc_count, r.counts.due_count), (0, 0));
            assert_eq!(r.counts.sdc_oob + r.counts.cl_oob + r.counts.due_oob, 0, "{policy}");
        }
    }
}

#[test]
fn plans_do_not_depend_on_the_policy() {
    let s = setup();
    for kind in [FaultKind::Weight, FaultKind::Neuron] {
        let a = Campaign::new(&s.model, &s.bounds, &s.data, s.subset.clone(), config(Policy::None, kind, 4, 1)).unwrap();
        let b = Campaign::new(&s.model, &s.bounds, &s.data, s.subset.clone(), config(Policy::Clipper, kind, 4, 1)).unwrap();
        for epoch in 0..5 {
            for &i in &s.subset {
                assert_eq!(a.plan(epoch, i).unwrap(), b.plan(epoch, i).unwrap());
            }
        }
    }
}

#[test]
fn weight_epochs_share_one_plan_and_neuron_runs_do_not() {
    let s = setup();
    let w = Campaign::new(&s.model, &s.bounds, &s.data, s.subset.clone(), config(Policy::None, FaultKind::Weight, 2, 1)).unwrap();
    let recs = w.run_epoch(4).unwrap();
    assert!(recs.windows(2).all(|p| p[0].bits == p[1].bits));
    let n = Campaign::new(&s.model, &s.bounds, &s.data, s.subset.clone(), config(Policy::None, FaultKind::Neuron, 2, 1)).unwrap();
    let plans: Vec<_> = s.subset.iter().map(|&i| n.plan(4, i).unwrap()).collect();
    if plans.len() > 1 {
        assert!(plans.windows(2).any(|p| p[0].specs != p[1].specs));
    }
    assert_eq!(n.run_epoch(4).unwrap(), n.run_epoch(4).unwrap());
}

#[test]
fn counts_partition_and_report_verifies() {
    let s = setup();
    for kind in [FaultKind::Weight, FaultKind::Neuron] {
        for k in [1, 10] {
            let c = Campaign::new(&s.model, &s.bounds, &s.data, s.subset.clone(), config(Policy::Ranger, kind, k, 6)).unwrap();
            let r = c.run().unwrap();
            r.counts.check().unwrap();
            r.verify().unwrap();
            assert_eq!(r.counts.bits.is_some(), k == 1);
            let mut tampered = r.clone();
            tampered.derived.p_sdc = Some(0.5);
            assert!(tampered.verify().is_err());
        }
    }
}

#[test]
fn campaign_rejects_bad_setups() {
    let s = setup();
    let cfg = || config(Policy::None, FaultKind::Weight, 1, 1);
    assert!(Campaign::new(&s.model, &s.bounds, &s.data, vec![], cfg()).is_err());
    let wrong: Vec<usize> = (0..s.data.len()).filter(|i| !s.subset.contains(i)).take(1).collect();
    assert!(Campaign::new(&s.model, &s.bounds, &s.data, wrong, cfg()).is_err());
    let mut bad_bounds = s.bounds.clone();
    bad_bounds.entries.pop();
    assert!(Campaign::new(&s.model, &bad_bounds, &s.data, s.subset.clone(), cfg()).is_err());
    let mut no_bits = cfg();
    no_bits.bits.clear();
    assert!(Campaign::new(&s.model, &s.bounds, &s.data, s.subset.clone(), no_bits).is_err());
}

fn record(baseline: usize, outcome: RunOutcome, any_oob: bool, bit: u8) -> RunRecord {
    RunRecord {
        epoch: 0,
        image: 0,
        label: baseline,
        baseline,
        outcome,
        any_oob,
        oob_counts: vec![usize::from(any_oob), 0],
        bits: vec![bit],
    }
}

#[test]
fn outcome_classification() {
    let flip = record(0, RunOutcome::Prediction { class: 7 }, false, 1);
    assert_eq!(classify_outcome(&flip), Outcome::Sdc);
    let due = record(0, RunOutcome::Due { layer: 3, kind: NonFinite::NaN }, false, 1);
    assert_eq!(classify_outcome(&due), Outcome::Due);
    let fp = record(4, RunOutcome::Prediction { class: 4 }, true, 1);
    assert_eq!(classify_outcome(&fp), Outcome::Correct);
    let mut c = CampaignCounts::new(2, true);
    c.record(&fp);
    assert_eq!((c.correct_count, c.cl_oob, c.point_oob_runs[0]), (1, 1, 1));
}

fn arb_record() -> impl Strategy<Value = RunRecord> {
    (0usize..4, 0usize..5, any::<bool>(), 0u8..32, any::<bool>()).prop_map(|(label, pred, oob, bit, due)| {
        let outcome = if due && pred == 4 {
            RunOutcome::Due { layer: 2, kind: NonFinite::Inf }
        } else {
            RunOutcome::Prediction { class: pred % 4 }
        };
        record(label, outcome, oob, bit)
    })
}

proptest! {
    #[test]
    fn merging_in_any_split_matches_sequential(
        records in proptest::collection::vec(arb_record(), 0..60),
        cuts in proptest::collection::vec(0usize..60, 0..6),
    ) {
        let mut seq = CampaignCounts::new(2, true);
        records.iter().for_each(|r| seq.record(r));
        seq.check().unwrap();

        let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c.min(records.len())).collect();
        cuts.push(0);
        cuts.push(records.len());
        cuts.sort_unstable();
        let mut parts: Vec<CampaignCounts> = cuts
            .windows(2)
            .map(|w| {
                let mut c = CampaignCounts::new(2, true);
                records[w[0]..w[1]].iter().for_each(|r| c.record(r));
                c
            })
            .collect();
        parts.reverse();
        let mut merged = CampaignCounts::new(2, true);
        parts.iter().for_each(|p| merged.merge(p));
        prop_assert_eq!(merged, seq);
    }
}
