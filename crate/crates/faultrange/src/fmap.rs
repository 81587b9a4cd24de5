//! Text dumps of per-layer feature maps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use faultrange_core::Tensor;

use crate::error::{Error, Result};

/// One file per channel, one row per line, values space separated in their
/// shortest round-trip form. Rank-1 outputs become a single one-row channel.
pub fn dump_fmap(dir: &Path, layer: usize, output: &Tensor) -> Result<Vec<String>> {
    let (channels, plane) = output.channel_layout();
    let width = match output.shape() {
        [_, _, w] => *w,
        _ => plane,
    };
    let mut names = Vec::with_capacity(channels);
    for c in 0..channels {
        let map = &output.data()[c * plane..(c + 1) * plane];
        let mut text = String::new();
        if width > 0 {
            for row in map.chunks(width) {
                let mut first = true;
                for v in row {
                    if !first {
                        text.push(' ');
                    }
                    first = false;
                    write!(text, "{v}").expect("string write");
                }
                text.push('\n');
            }
        }
        let name = format!("layer{layer}_ch{c}.txt");
        let path = dir.join(&name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        names.push(name);
    }
    Ok(names)
}

/// Parses one file produced by [`dump_fmap`].
pub fn parse_fmap(text: &str) -> std::result::Result<Vec<Vec<f32>>, std::num::ParseFloatError> {
    text.lines()
        .map(|l| l.split(' ').filter(|s| !s.is_empty()).map(str::parse).collect())
        .collect()
}
