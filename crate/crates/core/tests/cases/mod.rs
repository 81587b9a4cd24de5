//! Loader for `tests/data/policy_cases.txt`, shared with the acceptance suite.

use faultrange_core::protection::{apply_fmap_avg, apply_fmap_rescale, backflip, clipper, ranger};
use faultrange_core::Tensor;

pub enum Case {
    Scalar { policy: String, t_low: f32, t_up: f32, x: f32, want: f32 },
    Rescale { t_low: f32, t_up: f32, map: Vec<f32>, want: Vec<f32> },
    Avg { t_low: f32, t_up: f32, input: Tensor, want: Tensor },
}

fn num(s: &str) -> f32 {
    s.parse().unwrap_or_else(|_| panic!("bad number {s:?}"))
}

fn list(s: &str) -> Vec<f32> {
    s.split_whitespace().map(num).collect()
}

pub fn load(path: &str) -> Vec<Case> {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{path}: {e}"));
    let mut cases = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        let parts: Vec<&str> = line.split('|').collect();
        let head: Vec<&str> = parts[0].split_whitespace().collect();
        let (t_low, t_up) = (num(head[1]), num(head[2]));
        let case = match head[0] {
            "fmap_rescale" => Case::Rescale { t_low, t_up, map: list(parts[1]), want: list(parts[2]) },
            "fmap_avg" => {
                let shape: Vec<usize> = head[3].split(',').map(|d| d.parse().unwrap()).collect();
                let input = Tensor::new(shape.clone(), list(parts[1])).unwrap();
                let want = Tensor::new(shape, list(parts[2])).unwrap();
                Case::Avg { t_low, t_up, input, want }
            }
            p => Case::Scalar { policy: p.to_string(), t_low, t_up, x: num(head[3]), want: num(head[4]) },
        };
        cases.push(case);
    }
    cases
}

/// Policy name and element count for a case.
pub fn label(case: &Case) -> (&str, usize) {
    match case {
        Case::Scalar { policy, .. } => (policy, 1),
        Case::Rescale { map, .. } => ("fmap_rescale", map.len()),
        Case::Avg { input, .. } => ("fmap_avg", input.len()),
    }
}

/// Runs one case. Err carries a description of the mismatch.
pub fn run(case: &Case) -> Result<(), String> {
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    match case {
        Case::Scalar { policy, t_low, t_up, x, want } => {
            let f = match policy.as_str() {
                "ranger" => ranger,
                "clipper" => clipper,
                "backflip" => backflip,
                other => return Err(format!("unknown policy {other}")),
            };
            let got = f(*x, *t_low, *t_up);
            if got.to_bits() == want.to_bits() {
                Ok(())
            } else {
                Err(format!("{policy}({x:e}, {t_low}, {t_up}) = {got:e}, want {want:e}"))
            }
        }
        Case::Rescale { t_low, t_up, map, want } => {
            let mut got = map.clone();
            apply_fmap_rescale(&mut got, *t_low, *t_up);
            if bits(&got) == bits(want) {
                Ok(())
            } else {
                Err(format!("fmap_rescale {map:?} ({t_low}, {t_up}) = {got:?}"))
            }
        }
        Case::Avg { t_low, t_up, input, want } => {
            let mut got = input.clone();
            apply_fmap_avg(&mut got, *t_low, *t_up);
            if got.bit_eq(want) {
                Ok(())
            } else {
                Err(format!("fmap_avg {input:?} ({t_low}, {t_up}) = {got:?}"))
            }
        }
    }
}
