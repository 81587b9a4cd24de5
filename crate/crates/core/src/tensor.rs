//! Dense row-major FP32 tensors.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

/// Which non-finite value was found.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonFinite {
    Inf,
    NaN,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(alloc::format!(
                "zero-sized dimension in {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(alloc::format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// 1-D tensor over `data`.
    pub fn from_vec(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// Row-major flat offset of a multi-index.
    pub fn flat_index(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.shape.len() {
            return Err(Error::Shape(alloc::format!(
                "index rank {} for tensor of rank {}",
                idx.len(),
                self.shape.len()
            )));
        }
        let mut flat = 0;
        for (&i, &d) in idx.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::Shape(alloc::format!(
                    "index {idx:?} out of bounds for {:?}",
                    self.shape
                )));
            }
            flat = flat * d + i;
        }
        Ok(flat)
    }

    /// Inverse of [`Tensor::flat_index`].
    pub fn multi_index(&self, mut flat: usize) -> Result<Vec<usize>> {
        if flat >= self.data.len() {
            return Err(Error::Shape(alloc::format!(
                "flat index {flat} out of bounds for {} elements",
                self.data.len()
            )));
        }
        let mut idx = vec![0; self.shape.len()];
        for (slot, &d) in idx.iter_mut().zip(&self.shape).rev() {
            *slot = flat % d;
            flat /= d;
        }
        Ok(idx)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f32> {
        Ok(self.data[self.flat_index(idx)?])
    }

    /// Interprets the tensor as `[channels, plane]` where the leading axis is
    /// the channel axis for rank >= 2 and the whole vector is one plane for rank 1.
    pub fn channel_layout(&self) -> (usize, usize) {
        if self.shape.len() >= 2 {
            let c = self.shape[0];
            (c, self.data.len() / c)
        } else {
            (1, self.data.len())
        }
    }

    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.data)
    }

    /// First non-finite element by flat index, if any.
    pub fn scan_non_finite(&self) -> Option<(usize, NonFinite)> {
        scan_non_finite(&self.data)
    }

    /// Bitwise equality, so NaN payloads compare equal to themselves.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Index<usize> for Tensor {
    type Output = f32;

    fn index(&self, i: usize) -> &f32 {
        &self.data[i]
    }
}

impl IndexMut<usize> for Tensor {
    fn index_mut(&mut self, i: usize) -> &mut f32 {
        &mut self.data[i]
    }
}

/// Index of the maximum, lowest index on ties. NaN never wins a comparison.
pub fn argmax(values: &[f32]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            None => best = Some((i, v)),
            Some((_, b)) if v > b || (b.is_nan() && !v.is_nan()) => best = Some((i, v)),
            _ => {}
        }
    }
    best.map(|(i, _)| i)
}

pub fn scan_non_finite(values: &[f32]) -> Option<(usize, NonFinite)> {
    values.iter().enumerate().find_map(|(i, v)| {
        if v.is_nan() {
            Some((i, NonFinite::NaN))
        } else if v.is_infinite() {
            Some((i, NonFinite::Inf))
        } else {
            None
        }
    })
}
