//! Statistics over campaign counts: detector quality, bit attribution,
//! severity of misclassifications and the risk score.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bits::MSB;
use crate::campaign::CampaignCounts;
use crate::error::{Error, Result};

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// 95% Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64) -> Option<[f64; 2]> {
    const Z: f64 = 1.959_963_984_540_054;
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z / denom * libm::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
    Some([(center - half).max(0.0), (center + half).min(1.0)])
}

/// SDC detector quality over non-DUE runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    /// Absent when no run was out of bound.
    pub precision: Option<f64>,
    /// Absent when no SDC occurred.
    pub recall: Option<f64>,
}

/// `tp = p(sdc|oob) p(oob)`, `fp = p(cl|oob) p(oob)`, `fn = p(sdc|ib) p(ib)`,
/// with DUE runs removed from the event space first.
pub fn detector_metrics(c: &CampaignCounts) -> DetectorMetrics {
    let n = c.sdc_oob + c.sdc_ib + c.cl_oob + c.cl_ib;
    let frac = |x: u64| ratio(x, n).unwrap_or(0.0);
    DetectorMetrics {
        tp: frac(c.sdc_oob),
        fp: frac(c.cl_oob),
        fn_: frac(c.sdc_ib),
        precision: ratio(c.sdc_oob, c.sdc_oob + c.cl_oob),
        recall: ratio(c.sdc_oob, c.sdc_oob + c.sdc_ib),
    }
}

/// Per-bit conditional probabilities for single-fault campaigns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitAttribution {
    /// p(bit | sdc) per position 0..32; absent without SDC runs.
    pub given_sdc: Option<Vec<f64>>,
    pub given_due: Option<Vec<f64>>,
    pub msb_given_sdc: Option<f64>,
    pub msb_given_due: Option<f64>,
}

pub fn bit_attribution(k: usize, c: &CampaignCounts) -> Result<BitAttribution> {
    let bits = match (&c.bits, k) {
        (Some(b), 1) => b,
        _ => return Err(Error::AttributionUnavailable { k }),
    };
    let cond = |counts: &[u64], total: u64| -> Option<Vec<f64>> {
        (total > 0).then(|| counts.iter().map(|&x| x as f64 / total as f64).collect())
    };
    let msb = MSB.position() as usize;
    Ok(BitAttribution {
        given_sdc: cond(&bits.sdc, c.sdc_count),
        given_due: cond(&bits.due, c.due_count),
        msb_given_sdc: ratio(bits.sdc[msb], c.sdc_count),
        msb_given_due: ratio(bits.due[msb], c.due_count),
    })
}

/// Rates derived from raw counts; recomputable bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedMetrics {
    pub p_sdc: Option<f64>,
    pub p_due: Option<f64>,
    pub p_oob: Option<f64>,
    pub p_sdc_given_oob: Option<f64>,
    pub p_sdc_given_ib: Option<f64>,
    pub p_due_given_oob: Option<f64>,
    pub detector: DetectorMetrics,
    pub p_msb_given_sdc: Option<f64>,
    pub p_msb_given_due: Option<f64>,
    pub sdc_ci95: Option<[f64; 2]>,
    pub due_ci95: Option<[f64; 2]>,
    pub oob_ci95: Option<[f64; 2]>,
}

impl DerivedMetrics {
    pub fn from_counts(k: usize, c: &CampaignCounts) -> Self {
        let oob = c.sdc_oob + c.cl_oob + c.due_oob;
        let ib = c.sdc_ib + c.cl_ib + c.due_ib;
        let attribution = bit_attribution(k, c).ok();
        DerivedMetrics {
            p_sdc: ratio(c.sdc_count, c.run_count),
            p_due: ratio(c.due_count, c.run_count),
            p_oob: ratio(oob, c.run_count),
            p_sdc_given_oob: ratio(c.sdc_oob, oob),
            p_sdc_given_ib: ratio(c.sdc_ib, ib),
            p_due_given_oob: ratio(c.due_oob, oob),
            detector: detector_metrics(c),
            p_msb_given_sdc: attribution.as_ref().and_then(|a| a.msb_given_sdc),
            p_msb_given_due: attribution.as_ref().and_then(|a| a.msb_given_due),
            sdc_ci95: wilson_interval(c.sdc_count, c.run_count),
            due_ci95: wilson_interval(c.due_count, c.run_count),
            oob_ci95: wilson_interval(oob, c.run_count),
        }
    }
}

/// Class → cluster assignment and cluster vulnerability (higher = more vulnerable).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub class_to_cluster: BTreeMap<String, String>,
    pub cluster_rank: BTreeMap<String, i64>,
}

impl ClusterConfig {
    /// Vulnerability rank of every class in `class_names` order.
    pub fn class_ranks(&self, class_names: &[String]) -> Result<Vec<i64>> {
        class_names
            .iter()
            .map(|name| {
                let cluster = self.class_to_cluster.get(name).ok_or_else(|| {
                    Error::Config(alloc::format!("class {name:?} has no cluster"))
                })?;
                self.cluster_rank.get(cluster).copied().ok_or_else(|| {
                    Error::Config(alloc::format!("cluster {cluster:?} has no rank"))
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSeverity {
    pub label: usize,
    pub predicted: usize,
    pub count: u64,
    pub critical: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeverityReport {
    pub sdc: u64,
    pub critical: u64,
    /// Absent without SDC runs.
    pub critical_fraction: Option<f64>,
    pub pairs: Vec<PairSeverity>,
}

/// An SDC is critical when the predicted class sits in a strictly less
/// vulnerable cluster than the true class.
pub fn severity_analysis(c: &CampaignCounts, class_names: &[String], clusters: &ClusterConfig) -> Result<SeverityReport> {
    let ranks = clusters.class_ranks(class_names)?;
    let mut pairs = Vec::with_capacity(c.confusion.len());
    let (mut sdc, mut critical) = (0, 0);
    for e in &c.confusion {
        let (Some(&rt), Some(&rp)) = (ranks.get(e.label), ranks.get(e.predicted)) else {
            return Err(Error::Config(alloc::format!(
                "confusion pair ({}, {}) outside {} classes",
                e.label,
                e.predicted,
                ranks.len()
            )));
        };
        let is_critical = rp < rt;
        sdc += e.count;
        if is_critical {
            critical += e.count;
        }
        pairs.push(PairSeverity {
            label: e.label,
            predicted: e.predicted,
            count: e.count,
            critical: is_critical,
        });
    }
    Ok(SeverityReport {
        sdc,
        critical,
        critical_fraction: ratio(critical, sdc),
        pairs,
    })
}

/// Inputs for one fault type of the risk sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskTerm {
    pub p_failure: f64,
    pub p_detection: f64,
    pub p_mitigation: f64,
    pub severity: f64,
}

impl RiskTerm {
    /// Detection from recall (1 when no SDC occurred), mitigation from the residual SDC rate.
    pub fn from_counts(c: &CampaignCounts, p_failure: f64, severity: f64) -> Self {
        RiskTerm {
            p_failure,
            p_detection: detector_metrics(c).recall.unwrap_or(1.0),
            p_mitigation: 1.0 - ratio(c.sdc_count, c.run_count).unwrap_or(0.0),
            severity,
        }
    }

    pub fn loss(&self) -> f64 {
        self.p_failure * ((1.0 - self.p_detection) + (1.0 - self.p_mitigation))
    }
}

/// `sum_i p_failure(i) [(1 - p_detection(i)) + (1 - p_mitigation(i))] severity(i)`.
pub fn risk(terms: &[RiskTerm]) -> Result<f64> {
    let mut total = 0.0;
    for (i, t) in terms.iter().enumerate() {
        for (name, p) in [
            ("p_failure", t.p_failure),
            ("p_detection", t.p_detection),
            ("p_mitigation", t.p_mitigation),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(alloc::format!(
                    "terms[{i}].{name} = {p} outside [0, 1]"
                )));
            }
        }
        if t.severity.is_nan() || t.severity < 0.0 {
            return Err(Error::Config(alloc::format!(
                "terms[{i}].severity = {} must be non-negative",
                t.severity
            )));
        }
        total += t.loss() * t.severity;
    }
    Ok(total)
}
