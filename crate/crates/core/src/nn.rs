//! Sequential CNN inference with per-layer output hooks.
//!
//! Inputs are single images laid out `[C, H, W]`; batching is an outer loop.
//! Convolution and linear layers accumulate from zero over input channel,
//! then kernel row, then kernel column, and add the bias last, so results
//! are bit-reproducible on every platform.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NonFinite, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerKind {
    #[serde(rename = "conv2d")]
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
        bias: bool,
    },
    #[serde(rename = "linear")]
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d { window: usize, stride: usize },
    #[serde(rename = "avgpool2d")]
    AvgPool2d { window: usize, stride: usize },
    #[serde(rename = "flatten")]
    Flatten,
    #[serde(rename = "batchnorm2d")]
    BatchNorm2d { channels: usize, eps: f32 },
}

/// Role of a parameter tensor inside its layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSlot {
    Weight,
    Bias,
    Scale,
    Shift,
    Mean,
    Var,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Linear { .. } => "linear",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::AvgPool2d { .. } => "avgpool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::BatchNorm2d { .. } => "batchnorm2d",
        }
    }

    /// Conv2d and linear: the layers holding weights and whose outputs take neuron faults.
    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Linear { .. })
    }

    /// Parameter slots with their shapes, in storage order.
    pub fn param_shapes(&self) -> Vec<(ParamSlot, Vec<usize>)> {
        match *self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![(
                    ParamSlot::Weight,
                    vec![out_channels, in_channels, kernel[0], kernel[1]],
                )];
                if bias {
                    v.push((ParamSlot::Bias, vec![out_channels]));
                }
                v
            }
            LayerKind::Linear {
                in_features,
                out_features,
                bias,
            } => {
                let mut v = vec![(ParamSlot::Weight, vec![out_features, in_features])];
                if bias {
                    v.push((ParamSlot::Bias, vec![out_features]));
                }
                v
            }
            LayerKind::BatchNorm2d { channels, .. } => [
                ParamSlot::Scale,
                ParamSlot::Shift,
                ParamSlot::Mean,
                ParamSlot::Var,
            ]
            .into_iter()
            .map(|s| (s, vec![channels]))
            .collect(),
            _ => Vec::new(),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| {
            Err(Error::Shape(alloc::format!(
                "{} expects {what}, got input {input:?}",
                self.name()
            )))
        };
        match *self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                if stride == 0 || kernel[0] == 0 || kernel[1] == 0 {
                    return mismatch("nonzero kernel and stride");
                }
                if input.len() != 3 || input[0] != in_channels {
                    return mismatch("[in_channels, H, W]");
                }
                let h = input[1] + 2 * padding;
                let w = input[2] + 2 * padding;
                if h < kernel[0] || w < kernel[1] {
                    return mismatch("spatial size at least the kernel");
                }
                Ok(vec![
                    out_channels,
                    (h - kernel[0]) / stride + 1,
                    (w - kernel[1]) / stride + 1,
                ])
            }
            LayerKind::Linear {
                in_features,
                out_features,
                ..
            } => {
                if input.len() != 1 || input[0] != in_features {
                    return mismatch("[in_features]");
                }
                Ok(vec![out_features])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::MaxPool2d { window, stride } | LayerKind::AvgPool2d { window, stride } => {
                if window == 0 || stride == 0 {
                    return mismatch("nonzero window and stride");
                }
                if input.len() != 3 || input[1] < window || input[2] < window {
                    return mismatch("[C, H, W] with H, W >= window");
                }
                Ok(vec![
                    input[0],
                    (input[1] - window) / stride + 1,
                    (input[2] - window) / stride + 1,
                ])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::BatchNorm2d { channels, .. } => {
                if input.len() != 3 || input[0] != channels {
                    return mismatch("[channels, H, W]");
                }
                Ok(input.to_vec())
            }
        }
    }
}

/// A layer and its parameters, stored in [`LayerKind::param_shapes`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: Vec<Tensor>,
}

impl Layer {
    pub fn new(kind: LayerKind, params: Vec<Tensor>) -> Result<Self> {
        let expected = kind.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Shape(alloc::format!(
                "{} takes {} parameter tensors, got {}",
                kind.name(),
                expected.len(),
                params.len()
            )));
        }
        for ((slot, shape), p) in expected.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Shape(alloc::format!(
                    "{} {slot:?} must be {shape:?}, got {:?}",
                    kind.name(),
                    p.shape()
                )));
            }
        }
        Ok(Layer { kind, params })
    }

    /// Layer with zero-filled parameters (batchnorm variance set to one).
    pub fn zeroed(kind: LayerKind) -> Self {
        let params = kind
            .param_shapes()
            .into_iter()
            .map(|(slot, shape)| match slot {
                ParamSlot::Var | ParamSlot::Scale => Tensor::filled(&shape, 1.0),
                _ => Tensor::zeros(&shape),
            })
            .collect();
        Layer { kind, params }
    }

    pub fn param(&self, slot: ParamSlot) -> Option<&Tensor> {
        self.kind
            .param_shapes()
            .iter()
            .position(|(s, _)| *s == slot)
            .map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, slot: ParamSlot) -> Option<&mut Tensor> {
        self.kind
            .param_shapes()
            .iter()
            .position(|(s, _)| *s == slot)
            .map(move |i| &mut self.params[i])
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        layer_forward(&self.kind, &self.params, input)
    }
}

/// Ordered layers plus the indices after which protection is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    input_shape: Vec<usize>,
    class_names: Vec<String>,
    layers: Vec<Layer>,
    protection_points: Vec<usize>,
    output_shapes: Vec<Vec<usize>>,
}

impl ModelGraph {
    pub fn new(
        input_shape: Vec<usize>,
        class_names: Vec<String>,
        layers: Vec<Layer>,
        protection_points: Vec<usize>,
    ) -> Result<Self> {
        let mut shape = input_shape.clone();
        let mut output_shapes = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.kind.output_shape(&shape).map_err(|e| match e {
                Error::Shape(m) => Error::Shape(alloc::format!("layer {i}: {m}")),
                other => other,
            })?;
            output_shapes.push(shape.clone());
        }
        if layers.is_empty() {
            return Err(Error::Shape("model has no layers".into()));
        }
        if shape.len() != 1 || shape[0] != class_names.len() || class_names.is_empty() {
            return Err(Error::Shape(alloc::format!(
                "final output {shape:?} does not match {} class names",
                class_names.len()
            )));
        }
        if protection_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "protection points must be strictly increasing".into(),
            ));
        }
        if let Some(&p) = protection_points.last() {
            if p >= layers.len() {
                return Err(Error::Config(alloc::format!(
                    "protection point {p} beyond last layer {}",
                    layers.len() - 1
                )));
            }
        }
        Ok(ModelGraph {
            input_shape,
            class_names,
            layers,
            protection_points,
            output_shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable parameter access. Only parameter values may change; shapes are fixed.
    pub fn param_mut(&mut self, layer: usize, slot: ParamSlot) -> Option<&mut Tensor> {
        self.layers.get_mut(layer)?.param_mut(slot)
    }

    pub fn protection_points(&self) -> &[usize] {
        &self.protection_points
    }

    pub fn with_protection_points(mut self, points: Vec<usize>) -> Result<Self> {
        let layers = core::mem::take(&mut self.layers);
        ModelGraph::new(self.input_shape, self.class_names, layers, points)
    }

    pub fn output_shape(&self, layer: usize) -> &[usize] {
        &self.output_shapes[layer]
    }

    pub fn output_len(&self, layer: usize) -> usize {
        self.output_shapes[layer].iter().product()
    }
}

/// Observes and may rewrite a layer's output before it feeds the next layer.
pub trait LayerHook {
    fn after_layer(&mut self, layer: usize, output: &mut Tensor);
}

impl<F: FnMut(usize, &mut Tensor)> LayerHook for F {
    fn after_layer(&mut self, layer: usize, output: &mut Tensor) {
        self(layer, output)
    }
}

/// Result of one inference.
#[derive(Clone, Debug, PartialEq)]
pub enum InferenceOutcome {
    Scores(Tensor),
    /// Inference aborted on the first Inf/NaN seen after a layer's hooks.
    Due {
        layer: usize,
        index: usize,
        kind: NonFinite,
    },
}

impl InferenceOutcome {
    pub fn scores(&self) -> Option<&Tensor> {
        match self {
            InferenceOutcome::Scores(s) => Some(s),
            InferenceOutcome::Due { .. } => None,
        }
    }

    pub fn is_due(&self) -> bool {
        matches!(self, InferenceOutcome::Due { .. })
    }
}

/// Run every layer in order, applying `hooks` to each output and aborting on
/// the first non-finite value.
pub fn forward(
    model: &ModelGraph,
    input: &Tensor,
    hooks: &mut [&mut dyn LayerHook],
) -> Result<InferenceOutcome> {
    if input.shape() != model.input_shape() {
        return Err(Error::Shape(alloc::format!(
            "model expects input {:?}, got {:?}",
            model.input_shape(),
            input.shape()
        )));
    }
    let mut x = input.clone();
    for (i, layer) in model.layers().iter().enumerate() {
        x = layer.forward(&x)?;
        for hook in hooks.iter_mut() {
            hook.after_layer(i, &mut x);
        }
        if let Some((index, kind)) = x.scan_non_finite() {
            return Ok(InferenceOutcome::Due {
                layer: i,
                index,
                kind,
            });
        }
    }
    Ok(InferenceOutcome::Scores(x))
}

/// Top-1 class; ties go to the lowest index.
pub fn predict(scores: &Tensor) -> Result<usize> {
    scores
        .argmax()
        .ok_or_else(|| Error::Config("empty score vector".into()))
}

/// Keeps a copy of every layer output it sees.
#[derive(Default, Debug)]
pub struct RecordingHook {
    pub outputs: Vec<(usize, Tensor)>,
}

impl LayerHook for RecordingHook {
    fn after_layer(&mut self, layer: usize, output: &mut Tensor) {
        self.outputs.push((layer, output.clone()));
    }
}

pub fn layer_forward(kind: &LayerKind, params: &[Tensor], input: &Tensor) -> Result<Tensor> {
    let out_shape = kind.output_shape(input.shape())?;
    let x = input.data();
    let mut out = vec![0.0f32; out_shape.iter().product()];
    match *kind {
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel: [kh, kw],
            stride,
            padding,
            bias,
        } => {
            let (h, w) = (input.shape()[1], input.shape()[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let wt = params[0].data();
            let ksize = in_channels * kh * kw;
            // Each output sums over (channel, kernel row, kernel column) in that
            // order from +0.0, bias last; the loops run that order per output
            // while sweeping whole output planes.
            for o in 0..out_channels {
                let wo = &wt[o * ksize..(o + 1) * ksize];
                let acc = &mut out[o * oh * ow..(o + 1) * oh * ow];
                for c in 0..in_channels {
                    let plane = &x[c * h * w..(c + 1) * h * w];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wo[(c * kh + ky) * kw + kx];
                            for oy in 0..oh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let arow = &mut acc[oy * ow..(oy + 1) * ow];
                                if iy < 0 || iy >= h as isize {
                                    // padded zeros still enter the products
                                    arow.iter_mut().for_each(|a| *a += wv * 0.0);
                                    continue;
                                }
                                let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                                let x0 = kx as isize - padding as isize;
                                let x_last = x0 + ((ow - 1) * stride) as isize;
                                if stride == 1 && x0 >= 0 && x_last < w as isize {
                                    let x0 = x0 as usize;
                                    for (a, &v) in arow.iter_mut().zip(&row[x0..x0 + ow]) {
                                        *a += wv * v;
                                    }
                                    continue;
                                }
                                for (ox, a) in arow.iter_mut().enumerate() {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    let v = if ix < 0 || ix >= w as isize {
                                        0.0
                                    } else {
                                        row[ix as usize]
                                    };
                                    *a += wv * v;
                                }
                            }
                        }
                    }
                }
                if bias {
                    let b = params[1].data()[o];
                    acc.iter_mut().for_each(|a| *a += b);
                }
            }
        }
        LayerKind::Linear {
            in_features,
            bias,
            ..
        } => {
            let wt = params[0].data();
            for (o, y) in out.iter_mut().enumerate() {
                let row = &wt[o * in_features..(o + 1) * in_features];
                let mut acc = 0.0f32;
                for (wv, xv) in row.iter().zip(x) {
                    acc += wv * xv;
                }
                if bias {
                    acc += params[1].data()[o];
                }
                *y = acc;
            }
        }
        LayerKind::Relu => {
            for (y, &v) in out.iter_mut().zip(x) {
                *y = if v < 0.0 { 0.0 } else { v };
            }
        }
        LayerKind::MaxPool2d { window, stride } | LayerKind::AvgPool2d { window, stride } => {
            let is_max = matches!(kind, LayerKind::MaxPool2d { .. });
            let (h, w) = (input.shape()[1], input.shape()[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let area = (window * window) as f32;
            for c in 0..out_shape[0] {
                let plane = &x[c * h * w..(c + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = if is_max { f32::NEG_INFINITY } else { 0.0 };
                        for ky in 0..window {
                            for kx in 0..window {
                                let v = plane[(oy * stride + ky) * w + ox * stride + kx];
                                if is_max {
                                    if v > acc || v.is_nan() {
                                        acc = v;
                                    }
                                } else {
                                    acc += v;
                                }
                            }
                        }
                        out[(c * oh + oy) * ow + ox] = if is_max { acc } else { acc / area };
                    }
                }
            }
        }
        LayerKind::Flatten => out.copy_from_slice(x),
        LayerKind::BatchNorm2d { channels, eps } => {
            let plane = x.len() / channels;
            let [scale, shift, mean, var] = [0, 1, 2, 3].map(|i| params[i].data());
            for c in 0..channels {
                let inv = 1.0 / libm::sqrtf(var[c] + eps);
                for j in c * plane..(c + 1) * plane {
                    out[j] = (x[j] - mean[c]) * inv * scale[c] + shift[c];
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}
