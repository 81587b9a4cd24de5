//! Tabular views of campaign reports.

use std::fmt::Write as _;
use std::str::FromStr;

use faultrange_core::campaign::CampaignReport;
use faultrange_core::metrics::{risk, severity_analysis, ClusterConfig, RiskTerm};
use faultrange_core::BitIndex;
use serde::Serialize;

use crate::error::Result;

/// Contiguous ascending ranges print as `a:b`, anything else as a comma list.
pub fn format_bits(bits: &[BitIndex]) -> String {
    let pos: Vec<u8> = bits.iter().map(|b| b.position()).collect();
    let contiguous = pos.len() > 1 && pos.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous {
        format!("{}:{}", pos[0], pos[pos.len() - 1])
    } else {
        pos.iter().map(u8::to_string).collect::<Vec<_>>().join(",")
    }
}

/// Parses `a:b` (inclusive) or a comma separated list of bit positions.
pub fn parse_bits(s: &str) -> std::result::Result<Vec<BitIndex>, String> {
    let one = |t: &str| -> std::result::Result<BitIndex, String> {
        let v = u8::from_str(t.trim()).map_err(|_| format!("bad bit position {t:?}"))?;
        BitIndex::new(v).map_err(|_| format!("bit position {v} outside 0..=31"))
    };
    let bits = if let Some((a, b)) = s.split_once(':') {
        let (a, b) = (one(a)?, one(b)?);
        if a.position() > b.position() {
            return Err(format!("empty bit range {s:?}"));
        }
        (a.position()..=b.position()).filter_map(|p| BitIndex::new(p).ok()).collect()
    } else {
        s.split(',').map(one).collect::<std::result::Result<Vec<_>, _>>()?
    };
    let mut sorted: Vec<u8> = bits.iter().map(|b| b.position()).collect();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(format!("repeated bit position in {s:?}"));
    }
    Ok(bits)
}

/// One CSV row per campaign.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub policy: String,
    pub kind: String,
    pub k: usize,
    pub bits: String,
    pub epochs: usize,
    pub seed: u64,
    pub images: usize,
    pub runs: u64,
    pub sdc: u64,
    pub due: u64,
    pub p_sdc: Option<f64>,
    pub sdc_ci_low: Option<f64>,
    pub sdc_ci_high: Option<f64>,
    pub p_due: Option<f64>,
    pub p_oob: Option<f64>,
    pub p_sdc_given_oob: Option<f64>,
    pub p_sdc_given_ib: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub p_msb_given_sdc: Option<f64>,
    pub p_msb_given_due: Option<f64>,
    pub critical_fraction: Option<f64>,
    pub risk: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskInputs {
    pub p_failure: f64,
    pub severity: f64,
}

impl Default for RiskInputs {
    fn default() -> Self {
        RiskInputs {
            p_failure: 1.0,
            severity: 1.0,
        }
    }
}

pub fn report_row(r: &CampaignReport, clusters: Option<&ClusterConfig>, risk_in: RiskInputs) -> Result<ReportRow> {
    let d = &r.derived;
    let critical_fraction = match clusters {
        Some(c) => severity_analysis(&r.counts, &r.class_names, c)?.critical_fraction,
        None => None,
    };
    let term = RiskTerm::from_counts(&r.counts, risk_in.p_failure, risk_in.severity);
    Ok(ReportRow {
        policy: r.config.policy.name().into(),
        kind: r.config.kind.name().into(),
        k: r.config.k,
        bits: format_bits(&r.config.bits),
        epochs: r.config.epochs,
        seed: r.config.master_seed,
        images: r.image_count,
        runs: r.counts.run_count,
        sdc: r.counts.sdc_count,
        due: r.counts.due_count,
        p_sdc: d.p_sdc,
        sdc_ci_low: d.sdc_ci95.map(|c| c[0]),
        sdc_ci_high: d.sdc_ci95.map(|c| c[1]),
        p_due: d.p_due,
        p_oob: d.p_oob,
        p_sdc_given_oob: d.p_sdc_given_oob,
        p_sdc_given_ib: d.p_sdc_given_ib,
        precision: d.detector.precision,
        recall: d.detector.recall,
        p_msb_given_sdc: d.p_msb_given_sdc,
        p_msb_given_due: d.p_msb_given_due,
        critical_fraction,
        risk: risk(&[term])?,
    })
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

/// Fixed-width table for terminals.
pub fn to_table(rows: &[ReportRow]) -> String {
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
    let mut out = String::new();
    writeln!(
        out,
        "{:<13} {:<6} {:>3} {:<6} {:>8} {:>7} {:>7} {:>7} {:>9} {:>8} {:>7} {:>7} {:>7} {:>7}",
        "policy", "kind", "k", "bits", "runs", "sdc%", "due%", "oob%", "sdc|oob%", "sdc|ib%", "prec%", "rec%", "crit%", "risk"
    )
    .expect("string write");
    for r in rows {
        writeln!(
            out,
            "{:<13} {:<6} {:>3} {:<6} {:>8} {:>7} {:>7} {:>7} {:>9} {:>8} {:>7} {:>7} {:>7} {:>7.4}",
            r.policy,
            r.kind,
            r.k,
            r.bits,
            r.runs,
            pct(r.p_sdc),
            pct(r.p_due),
            pct(r.p_oob),
            pct(r.p_sdc_given_oob),
            pct(r.p_sdc_given_ib),
            pct(r.precision),
            pct(r.recall),
            pct(r.critical_fraction),
            r.risk
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_specs() {
        let b = parse_bits("0:8").unwrap();
        assert_eq!(b.len(), 9);
        assert_eq!(format_bits(&b), "0:8");
        assert_eq!(format_bits(&parse_bits("1").unwrap()), "1");
        assert_eq!(format_bits(&parse_bits("3,1").unwrap()), "3,1");
        assert!(parse_bits("8:0").is_err());
        assert!(parse_bits("32").is_err());
        assert!(parse_bits("1,1").is_err());
        assert!(parse_bits("x").is_err());
    }
}
