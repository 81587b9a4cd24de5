//! Range supervision: bound extraction, out-of-bound detection and the
//! restriction policies applied at protection points.
//!
//! A value is out of bound when `x > t_up` or `x < t_low`; values equal to a
//! bound are in bound and NaN is never out of bound.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward, InferenceOutcome, LayerHook, ModelGraph};
use crate::tensor::Tensor;

/// Restriction applied to out-of-bound activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Detection only; values pass through.
    None,
    Ranger,
    Clipper,
    FmapRescale,
    Backflip,
    FmapAvg,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::None,
        Policy::Ranger,
        Policy::Clipper,
        Policy::FmapRescale,
        Policy::Backflip,
        Policy::FmapAvg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::None => "none",
            Policy::Ranger => "ranger",
            Policy::Clipper => "clipper",
            Policy::FmapRescale => "fmap_rescale",
            Policy::Backflip => "backflip",
            Policy::FmapAvg => "fmap_avg",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown policy {s:?}")))
    }
}

#[inline]
pub fn is_oob(x: f32, t_low: f32, t_up: f32) -> bool {
    x > t_up || x < t_low
}

// 2^64
const BACKFLIP_SCALE: f64 = 18_446_744_073_709_551_616.0;

#[inline]
pub fn ranger(x: f32, t_low: f32, t_up: f32) -> f32 {
    if x > t_up {
        t_up
    } else if x < t_low {
        t_low
    } else {
        x
    }
}

#[inline]
pub fn clipper(x: f32, t_low: f32, t_up: f32) -> f32 {
    if is_oob(x, t_low, t_up) {
        0.0
    } else {
        x
    }
}

/// Thresholds are compared in f64 so `t_up * 2^64` never overflows.
#[inline]
pub fn backflip(x: f32, t_low: f32, t_up: f32) -> f32 {
    let (xd, up) = (f64::from(x), f64::from(t_up));
    if xd > up * BACKFLIP_SCALE {
        0.0
    } else if xd > up * 2.0 {
        2.0
    } else if x > t_up {
        t_up
    } else if x < t_low {
        t_low
    } else {
        x
    }
}

pub fn apply_ranger(values: &mut [f32], t_low: f32, t_up: f32) {
    values.iter_mut().for_each(|x| *x = ranger(*x, t_low, t_up));
}

pub fn apply_clipper(values: &mut [f32], t_low: f32, t_up: f32) {
    values.iter_mut().for_each(|x| *x = clipper(*x, t_low, t_up));
}

pub fn apply_backflip(values: &mut [f32], t_low: f32, t_up: f32) {
    values.iter_mut().for_each(|x| *x = backflip(*x, t_low, t_up));
}

/// Linear rescale of one feature map. Values above `t_up` are mapped with
/// the map's pre-restriction min/max. The maximum itself lands on `t_up`,
/// which also covers a constant map and an infinite maximum.
pub fn apply_fmap_rescale(map: &mut [f32], t_low: f32, t_up: f32) {
    let lo = map.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = f64::from(hi) - f64::from(lo);
    let range = f64::from(t_up) - f64::from(t_low);
    for x in map.iter_mut() {
        if *x > t_up {
            let v = (f64::from(*x) - f64::from(lo)) * range / span + f64::from(t_low);
            // NaN only from an infinite span below a finite x: its limit is the top
            *x = if *x == hi || v.is_nan() { t_up } else { v as f32 };
        } else if *x < t_low {
            *x = t_low;
        }
    }
}

/// Feature-map averaging over a layer output laid out `[C, ...]`.
///
/// Channels entirely inside `[t_low, t_up]` are healthy; out-of-bound
/// positions of the other channels are replaced by the elementwise mean of
/// the healthy channels, or by zero when none is healthy. A rank-1 tensor is
/// a single channel.
pub fn apply_fmap_avg(t: &mut Tensor, t_low: f32, t_up: f32) {
    let (channels, plane) = t.channel_layout();
    let data = t.data_mut();
    let healthy: Vec<bool> = data
        .chunks_exact(plane)
        .map(|f| f.iter().all(|&x| x <= t_up && x >= t_low))
        .collect();
    if healthy.iter().all(|&h| h) {
        return;
    }
    let n_healthy = healthy.iter().filter(|&&h| h).count();
    // f64 sums keep the mean of in-bound values in bounds after rounding
    let mut sum = vec![0.0f64; plane];
    for (f, _) in data.chunks_exact(plane).zip(&healthy).filter(|(_, &h)| h) {
        for (a, &x) in sum.iter_mut().zip(f) {
            *a += f64::from(x);
        }
    }
    let avg: Vec<f32> = sum
        .iter()
        .map(|&s| if n_healthy > 0 { (s / n_healthy as f64) as f32 } else { 0.0 })
        .collect();
    for c in (0..channels).filter(|&c| !healthy[c]) {
        for (x, &a) in data[c * plane..(c + 1) * plane].iter_mut().zip(&avg) {
            if is_oob(*x, t_low, t_up) {
                *x = a;
            }
        }
    }
}

/// Out-of-bound statistics for one protection point in one run.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct OobEvent {
    pub protection_point: usize,
    pub count: usize,
    /// Largest |x| among offending elements.
    pub max_magnitude: f32,
}

impl OobEvent {
    pub fn any(&self) -> bool {
        self.count > 0
    }
}

pub fn detect(values: &[f32], protection_point: usize, t_low: f32, t_up: f32) -> OobEvent {
    let mut ev = OobEvent {
        protection_point,
        ..Default::default()
    };
    for &x in values {
        if is_oob(x, t_low, t_up) {
            ev.count += 1;
            ev.max_magnitude = ev.max_magnitude.max(x.abs());
        }
    }
    ev
}

/// Record out-of-bound elements of `t`, then restrict it in place.
pub fn protect(t: &mut Tensor, protection_point: usize, bound: Bound, policy: Policy) -> OobEvent {
    let Bound { t_low, t_up } = bound;
    let ev = detect(t.data(), protection_point, t_low, t_up);
    if ev.count == 0 {
        return ev;
    }
    match policy {
        Policy::None => {}
        Policy::Ranger => apply_ranger(t.data_mut(), t_low, t_up),
        Policy::Clipper => apply_clipper(t.data_mut(), t_low, t_up),
        Policy::Backflip => apply_backflip(t.data_mut(), t_low, t_up),
        Policy::FmapRescale => {
            let (_, plane) = t.channel_layout();
            for map in t.data_mut().chunks_exact_mut(plane) {
                apply_fmap_rescale(map, t_low, t_up);
            }
        }
        Policy::FmapAvg => apply_fmap_avg(t, t_low, t_up),
    }
    ev
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bound {
    pub t_low: f32,
    pub t_up: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub protection_point: usize,
    pub t_low: f32,
    pub t_up: f32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_id: String,
    pub sample_count: usize,
}

/// Per-protection-point activation intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsProfile {
    pub entries: Vec<BoundEntry>,
    pub provenance: Provenance,
}

impl BoundsProfile {
    /// Entries must be ordered intervals with `t_low <= t_up` and distinct points.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.t_low.is_nan() || e.t_up.is_nan() || e.t_low > e.t_up {
                return Err(Error::Config(alloc::format!(
                    "entries[{i}]: t_low {} > t_up {} at protection point {}",
                    e.t_low,
                    e.t_up,
                    e.protection_point
                )));
            }
        }
        if self
            .entries
            .windows(2)
            .any(|w| w[0].protection_point >= w[1].protection_point)
        {
            return Err(Error::Config(
                "entries must have strictly increasing protection points".into(),
            ));
        }
        Ok(())
    }

    /// Valid and exactly one entry per protection point of `model`.
    pub fn validate_for(&self, model: &ModelGraph) -> Result<()> {
        self.validate()?;
        let points: Vec<usize> = self.entries.iter().map(|e| e.protection_point).collect();
        if points != model.protection_points() {
            return Err(Error::Config(alloc::format!(
                "bounds cover points {points:?}, model protects {:?}",
                model.protection_points()
            )));
        }
        Ok(())
    }

    pub fn get(&self, protection_point: usize) -> Option<Bound> {
        self.entries
            .iter()
            .find(|e| e.protection_point == protection_point)
            .map(|e| Bound {
                t_low: e.t_low,
                t_up: e.t_up,
            })
    }
}

/// Protection layer for a whole model: applies `policy` after every
/// protection point and accumulates out-of-bound counts per point.
#[derive(Clone, Debug)]
pub struct ProtectionHook {
    policy: Policy,
    by_layer: Vec<Option<(usize, Bound)>>,
    events: Vec<OobEvent>,
}

impl ProtectionHook {
    pub fn new(model: &ModelGraph, bounds: &BoundsProfile, policy: Policy) -> Result<Self> {
        let mut by_layer = vec![None; model.layers().len()];
        let mut events = Vec::with_capacity(model.protection_points().len());
        for (slot, &p) in model.protection_points().iter().enumerate() {
            let b = bounds.get(p).ok_or_else(|| {
                Error::Config(alloc::format!("no bounds entry for protection point {p}"))
            })?;
            if b.t_low.is_nan() || b.t_up.is_nan() || b.t_low > b.t_up {
                return Err(Error::Config(alloc::format!(
                    "invalid interval at protection point {p}"
                )));
            }
            by_layer[p] = Some((slot, b));
            events.push(OobEvent {
                protection_point: p,
                ..Default::default()
            });
        }
        Ok(ProtectionHook {
            policy,
            by_layer,
            events,
        })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    /// One event per protection point, in model order.
    pub fn events(&self) -> &[OobEvent] {
        &self.events
    }

    pub fn any_oob(&self) -> bool {
        self.events.iter().any(OobEvent::any)
    }

    pub fn reset(&mut self) {
        for e in &mut self.events {
            e.count = 0;
            e.max_magnitude = 0.0;
        }
    }
}

impl LayerHook for ProtectionHook {
    fn after_layer(&mut self, layer: usize, output: &mut Tensor) {
        if let Some(Some((slot, bound))) = self.by_layer.get(layer) {
            let ev = protect(output, layer, *bound, self.policy);
            let acc = &mut self.events[*slot];
            acc.count += ev.count;
            acc.max_magnitude = acc.max_magnitude.max(ev.max_magnitude);
        }
    }
}

struct MinMaxHook {
    by_layer: Vec<Option<usize>>,
    ranges: Vec<(f32, f32)>,
}

impl LayerHook for MinMaxHook {
    fn after_layer(&mut self, layer: usize, output: &mut Tensor) {
        if let Some(Some(slot)) = self.by_layer.get(layer) {
            let r = &mut self.ranges[*slot];
            for &x in output.data() {
                r.0 = r.0.min(x);
                r.1 = r.1.max(x);
            }
        }
    }
}

/// Fault-free min/max of every protection point's activations over `inputs`.
pub fn extract_bounds<'a, I>(
    model: &ModelGraph,
    inputs: I,
    dataset_id: &str,
) -> Result<BoundsProfile>
where
    I: IntoIterator<Item = &'a Tensor>,
{
    let points = model.protection_points();
    let mut by_layer = vec![None; model.layers().len()];
    for (slot, &p) in points.iter().enumerate() {
        by_layer[p] = Some(slot);
    }
    let mut hook = MinMaxHook {
        by_layer,
        ranges: vec![(f32::INFINITY, f32::NEG_INFINITY); points.len()],
    };
    let mut count = 0;
    for input in inputs {
        if let InferenceOutcome::Due { layer, .. } = forward(model, input, &mut [&mut hook])? {
            return Err(Error::Config(alloc::format!(
                "profiling input {count} hit a non-finite value at layer {layer}"
            )));
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Config("empty profiling set".into()));
    }
    Ok(BoundsProfile {
        entries: points
            .iter()
            .zip(&hook.ranges)
            .map(|(&p, &(t_low, t_up))| BoundEntry {
                protection_point: p,
                t_low,
                t_up,
            })
            .collect(),
        provenance: Provenance {
            dataset_id: dataset_id.into(),
            sample_count: count,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn policy_names_roundtrip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!("Clipper".parse::<Policy>().is_err());
    }

    #[test]
    fn fmap_rescale_constant_map_goes_to_t_up() {
        let mut f = [12.0, 12.0];
        apply_fmap_rescale(&mut f, 0.0, 10.0);
        assert_eq!(f, [10.0, 10.0]);
    }

    #[test]
    fn fmap_rescale_does_not_overflow() {
        let mut f = [0.0, 1.0, 3.0e38];
        apply_fmap_rescale(&mut f, 0.0, 10.0);
        assert_eq!(f, [0.0, 1.0, 10.0]);
    }

    #[test]
    fn fmap_avg_rank1_acts_like_zeroing() {
        let mut t = Tensor::from_vec(vec![1.0, 50.0, -2.0]);
        apply_fmap_avg(&mut t, 0.0, 10.0);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn nan_is_never_out_of_bound() {
        let ev = detect(&[f32::NAN, 1.0], 0, 0.0, 10.0);
        assert_eq!(ev.count, 0);
        let mut t = Tensor::from_vec(vec![f32::NAN, 20.0]);
        protect(&mut t, 0, Bound { t_low: 0.0, t_up: 10.0 }, Policy::Clipper);
        assert!(t.data()[0].is_nan());
        assert_eq!(t.data()[1], 0.0);
    }

    #[test]
    fn infinity_is_removed_by_clipper() {
        let mut t = Tensor::from_vec(vec![f32::INFINITY, 3.0]);
        let ev = protect(&mut t, 4, Bound { t_low: 0.0, t_up: 10.0 }, Policy::Clipper);
        assert_eq!(ev.count, 1);
        assert_eq!(ev.max_magnitude, f32::INFINITY);
        assert_eq!(t.data(), &[0.0, 3.0]);
    }

    #[test]
    fn bounds_validation() {
        let mut b = BoundsProfile {
            entries: vec![BoundEntry { protection_point: 1, t_low: 0.0, t_up: 1.0 }],
            provenance: Provenance { dataset_id: "x".to_string(), sample_count: 1 },
        };
        assert!(b.validate().is_ok());
        b.entries[0].t_low = 2.0;
        assert!(b.validate().is_err());
    }

    #[test]
    fn backflip_counterexample_to_idempotence() {
        // With 1 <= t_up < 2 the reset value 2 is itself out of bound.
        let once = backflip(1e10, 0.0, 1.5);
        assert_eq!(once, 2.0);
        assert_eq!(backflip(once, 0.0, 1.5), 1.5);
    }
}
