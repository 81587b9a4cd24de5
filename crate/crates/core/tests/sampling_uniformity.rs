use faultrange_core::bits::BitIndex;
use faultrange_core::fault::{eligible_sites, sample_faults, SamplingOptions};
use faultrange_core::rng::{Purpose, StreamKey};
use faultrange_core::train::init_fixture;
use faultrange_core::FaultKind;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square(observed: &[u64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum()
}

fn critical(bins: usize) -> f64 {
    ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.99)
}

#[test]
fn single_faults_are_uniform_over_bits_and_elements() {
    let classes = (0..6).map(|i| format!("c{i}")).collect();
    let model = init_fixture(classes, 1).unwrap();
    let bits: Vec<BitIndex> = (0..=8).map(|b| BitIndex::new(b).unwrap()).collect();
    for kind in [FaultKind::Weight, FaultKind::Neuron] {
        let sites = eligible_sites(&model, kind, false);
        let total: usize = sites.iter().map(|s| s.len).sum();
        // global element index of a (layer, element) pair
        let offset = |layer: usize| -> usize {
            sites.iter().take_while(|s| s.layer != layer).map(|s| s.len).sum()
        };
        const BINS: usize = 40;
        let bin_of = |g: usize| g * BINS / total;
        let mut bin_sizes = vec![0usize; BINS];
        for g in 0..total {
            bin_sizes[bin_of(g)] += 1;
        }
        let n = 100_000u64;
        let mut bit_counts = vec![0u64; bits.len()];
        let mut elem_counts = vec![0u64; BINS];
        for i in 0..n {
            let purpose = match kind {
                FaultKind::Weight => Purpose::WeightFaults,
                FaultKind::Neuron => Purpose::NeuronFaults,
            };
            let plan = sample_faults(&model, kind, 1, &bits, StreamKey::new(9, purpose, i, 0), SamplingOptions::default()).unwrap();
            let s = plan.specs[0];
            bit_counts[s.bit.position() as usize] += 1;
            elem_counts[bin_of(offset(s.layer) + s.element)] += 1;
        }
        let eb = vec![n as f64 / bits.len() as f64; bits.len()];
        let chi_bits = chi_square(&bit_counts, &eb);
        assert!(chi_bits < critical(bits.len()), "{kind:?} bits chi2 {chi_bits}");
        let ee: Vec<f64> = bin_sizes.iter().map(|&s| n as f64 * s as f64 / total as f64).collect();
        let chi_elems = chi_square(&elem_counts, &ee);
        assert!(chi_elems < critical(BINS), "{kind:?} elements chi2 {chi_elems}");
    }
}
