//! Fixture classifier: topology, SGD training and accuracy evaluation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward, predict, InferenceOutcome, Layer, LayerKind, ModelGraph};
use crate::rng::{Purpose, StreamKey};
use crate::tensor::Tensor;

/// LeNet-style layer stack for `[1, 28, 28]` inputs.
pub fn fixture_layers(num_classes: usize) -> Vec<LayerKind> {
    let conv = |cin, cout| LayerKind::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: [5, 5],
        stride: 1,
        padding: 0,
        bias: true,
    };
    let lin = |i, o| LayerKind::Linear {
        in_features: i,
        out_features: o,
        bias: true,
    };
    let pool = LayerKind::MaxPool2d { window: 2, stride: 2 };
    vec![
        conv(1, 6),
        LayerKind::Relu,
        pool.clone(),
        conv(6, 16),
        LayerKind::Relu,
        pool,
        LayerKind::Flatten,
        lin(256, 120),
        LayerKind::Relu,
        lin(120, 84),
        LayerKind::Relu,
        lin(84, num_classes),
    ]
}

/// Protection after every activation and pooling layer.
pub fn default_protection_points(layers: &[LayerKind]) -> Vec<usize> {
    layers
        .iter()
        .enumerate()
        .filter(|(_, k)| {
            matches!(
                k,
                LayerKind::Relu | LayerKind::MaxPool2d { .. } | LayerKind::AvgPool2d { .. }
            )
        })
        .map(|(i, _)| i)
        .collect()
}

/// Uniform weights in `±sqrt(1 / fan_in)`, zero biases.
pub fn init_fixture(class_names: Vec<String>, seed: u64) -> Result<ModelGraph> {
    let kinds = fixture_layers(class_names.len());
    let points = default_protection_points(&kinds);
    let layers = kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let mut layer = Layer::zeroed(kind);
            if let Some(w) = layer.params.first_mut() {
                let fan_in: usize = w.shape()[1..].iter().product();
                let limit = libm::sqrtf(1.0 / fan_in as f32);
                let mut rng = StreamKey::new(seed, Purpose::Init, i as u64, 0).rng();
                for v in w.data_mut() {
                    *v = rng.gen_range(-limit..=limit);
                }
            }
            layer
        })
        .collect();
    ModelGraph::new(vec![1, 28, 28], class_names, layers, points)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            epochs: 5,
            lr: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f32>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Per-parameter gradients of one layer, same layout as `Layer::params`.
pub type ParamGrads = Vec<Tensor>;

/// Backward pass of one layer given its input and upstream gradient.
pub fn layer_backward(layer: &Layer, input: &Tensor, grad_out: &Tensor) -> Result<(Tensor, ParamGrads)> {
    let x = input.data();
    let g = grad_out.data();
    let mut dx = vec![0.0f32; x.len()];
    let mut grads: ParamGrads = layer.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    match layer.kind {
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel: [kh, kw],
            stride,
            padding,
            bias,
        } => {
            let (h, w) = (input.shape()[1], input.shape()[2]);
            let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
            let wt = layer.params[0].data();
            let ksize = in_channels * kh * kw;
            let (dw, rest) = grads.split_at_mut(1);
            let dw = dw[0].data_mut();
            for o in 0..out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = g[(o * oh + oy) * ow + ox];
                        if bias {
                            rest[0][o] += go;
                        }
                        if go == 0.0 {
                            continue;
                        }
                        for c in 0..in_channels {
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = (c * h + iy as usize) * w + ix as usize;
                                    let wi = o * ksize + (c * kh + ky) * kw + kx;
                                    dw[wi] += go * x[xi];
                                    dx[xi] += go * wt[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        LayerKind::Linear {
            in_features,
            bias,
            ..
        } => {
            let wt = layer.params[0].data();
            for (o, &go) in g.iter().enumerate() {
                let row = o * in_features;
                for i in 0..in_features {
                    grads[0][row + i] += go * x[i];
                    dx[i] += go * wt[row + i];
                }
                if bias {
                    grads[1][o] += go;
                }
            }
        }
        LayerKind::Relu => {
            for ((d, &xv), &gv) in dx.iter_mut().zip(x).zip(g) {
                *d = if xv > 0.0 { gv } else { 0.0 };
            }
        }
        LayerKind::MaxPool2d { window, stride } | LayerKind::AvgPool2d { window, stride } => {
            let is_max = matches!(layer.kind, LayerKind::MaxPool2d { .. });
            let (h, w) = (input.shape()[1], input.shape()[2]);
            let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
            let area = (window * window) as f32;
            for c in 0..input.shape()[0] {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = g[(c * oh + oy) * ow + ox];
                        let at = |ky: usize, kx: usize| (c * h + oy * stride + ky) * w + ox * stride + kx;
                        if is_max {
                            let mut best = at(0, 0);
                            for ky in 0..window {
                                for kx in 0..window {
                                    if x[at(ky, kx)] > x[best] {
                                        best = at(ky, kx);
                                    }
                                }
                            }
                            dx[best] += go;
                        } else {
                            for ky in 0..window {
                                for kx in 0..window {
                                    dx[at(ky, kx)] += go / area;
                                }
                            }
                        }
                    }
                }
            }
        }
        LayerKind::Flatten => dx.copy_from_slice(g),
        LayerKind::BatchNorm2d { .. } => {
            return Err(Error::Config("batchnorm2d layers are inference-only".into()));
        }
    }
    Ok((Tensor::new(input.shape().to_vec(), dx)?, grads))
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f32], label: usize) -> (f32, Vec<f32>) {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| libm::expf(z - m)).collect();
    let sum: f32 = exps.iter().sum();
    let loss = libm::logf(sum) + m - logits[label];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| e / sum - if i == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

/// One SGD step on a single sample; returns the loss before the update.
pub fn sgd_step(layers: &mut [Layer], image: &Tensor, label: usize, lr: f32) -> Result<f32> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(image.clone());
    for layer in layers.iter() {
        let next = layer.forward(acts.last().expect("nonempty"))?;
        acts.push(next);
    }
    let (loss, g) = cross_entropy(acts.last().expect("nonempty").data(), label);
    let mut grad = Tensor::from_vec(g);
    for (i, layer) in layers.iter_mut().enumerate().rev() {
        let (dx, pgrads) = layer_backward(layer, &acts[i], &grad)?;
        for (p, gp) in layer.params.iter_mut().zip(&pgrads) {
            for (v, &d) in p.data_mut().iter_mut().zip(gp.data()) {
                *v -= lr * d;
            }
        }
        grad = dx;
    }
    Ok(loss)
}

/// Train the fixture topology on `train` with plain per-sample SGD.
pub fn train_fixture(train: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<(ModelGraph, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let model = init_fixture(train.class_names.clone(), cfg.seed)?;
    let points = model.protection_points().to_vec();
    let mut layers: Vec<Layer> = model.layers().to_vec();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = StreamKey::new(cfg.seed, Purpose::Shuffle, epoch as u64, 0).rng();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut total = 0.0f64;
        for &i in &order {
            let loss = sgd_step(&mut layers, &train.images[i], train.labels[i], cfg.lr)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += f64::from(loss);
        }
        epoch_losses.push((total / train.len() as f64) as f32);
    }
    let model = ModelGraph::new(
        model.input_shape().to_vec(),
        train.class_names.clone(),
        layers,
        points,
    )?;
    let train_accuracy = evaluate_accuracy(&model, train)?.accuracy();
    let test_accuracy = match test {
        Some(t) => Some(evaluate_accuracy(&model, t)?.accuracy()),
        None => None,
    };
    Ok((
        model,
        TrainReport {
            epoch_losses,
            train_accuracy,
            test_accuracy,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Accuracy {
    pub total: usize,
    /// Indices classified correctly without faults, ascending.
    pub correct_indices: Vec<usize>,
}

impl Accuracy {
    pub fn correct(&self) -> usize {
        self.correct_indices.len()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total as f64
    }
}

/// Fault-free top-1 accuracy. A non-finite inference counts as wrong.
pub fn evaluate_accuracy(model: &ModelGraph, data: &Dataset) -> Result<Accuracy> {
    if data.is_empty() {
        return Err(Error::Config("accuracy of an empty dataset is undefined".into()));
    }
    if data.num_classes() != model.num_classes() {
        return Err(Error::Config(alloc::format!(
            "dataset has {} classes, model {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    let mut correct_indices = Vec::new();
    for (i, (img, &label)) in data.images.iter().zip(&data.labels).enumerate() {
        if let InferenceOutcome::Scores(s) = forward(model, img, &mut [])? {
            if predict(&s)? == label {
                correct_indices.push(i);
            }
        }
    }
    Ok(Accuracy {
        total: data.len(),
        correct_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_shapes, ShapesConfig};
    use alloc::string::ToString;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], avoid_kink: bool) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let mut v: f32 = rng.gen_range(-1.0..1.0);
                if avoid_kink && v.abs() < 0.05 {
                    v += 0.1f32.copysign(v);
                }
                v
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn weighted_sum(out: &Tensor, r: &Tensor) -> f64 {
        out.data().iter().zip(r.data()).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
    }

    /// Central differences with h = 1e-3 against the analytic gradient of sum(r * y).
    fn check_layer(kind: LayerKind, input_shape: &[usize], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let avoid = !kind.is_parameterized();
        let mut layer = Layer::zeroed(kind);
        for p in layer.params.iter_mut() {
            *p = random_tensor(&mut rng, p.shape(), false);
        }
        let mut x = random_tensor(&mut rng, input_shape, avoid);
        let out = layer.forward(&x).unwrap();
        let r = random_tensor(&mut rng, out.shape(), false);
        let (dx, grads) = layer_backward(&layer, &x, &r).unwrap();
        let h = 1e-3f32;
        let close = |fd: f64, an: f32| (fd - f64::from(an)).abs() <= 1e-3 * f64::from(an.abs()).max(1.0);

        for i in 0..x.len() {
            let v = x[i];
            x[i] = v + h;
            let up = weighted_sum(&layer.forward(&x).unwrap(), &r);
            x[i] = v - h;
            let down = weighted_sum(&layer.forward(&x).unwrap(), &r);
            x[i] = v;
            let fd = (up - down) / (2.0 * f64::from(h));
            assert!(close(fd, dx[i]), "{:?} input {i}: fd {fd} vs {}", layer.kind, dx[i]);
        }
        for p in 0..layer.params.len() {
            for i in 0..layer.params[p].len() {
                let v = layer.params[p][i];
                layer.params[p][i] = v + h;
                let up = weighted_sum(&layer.forward(&x).unwrap(), &r);
                layer.params[p][i] = v - h;
                let down = weighted_sum(&layer.forward(&x).unwrap(), &r);
                layer.params[p][i] = v;
                let fd = (up - down) / (2.0 * f64::from(h));
                assert!(close(fd, grads[p][i]), "{:?} param {p}[{i}]: fd {fd} vs {}", layer.kind, grads[p][i]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_layer(
            LayerKind::Conv2d { in_channels: 2, out_channels: 3, kernel: [3, 3], stride: 1, padding: 1, bias: true },
            &[2, 5, 5],
            1,
        );
        check_layer(
            LayerKind::Conv2d { in_channels: 1, out_channels: 2, kernel: [2, 3], stride: 2, padding: 0, bias: false },
            &[1, 6, 7],
            2,
        );
        check_layer(LayerKind::Linear { in_features: 7, out_features: 4, bias: true }, &[7], 3);
        check_layer(LayerKind::Relu, &[2, 3, 3], 4);
        check_layer(LayerKind::MaxPool2d { window: 2, stride: 2 }, &[2, 4, 4], 5);
        check_layer(LayerKind::AvgPool2d { window: 2, stride: 2 }, &[2, 4, 4], 6);
        check_layer(LayerKind::Flatten, &[2, 2, 3], 7);
    }

    #[test]
    fn cross_entropy_gradient() {
        let z = [0.3f32, -1.2, 2.0];
        let (_, g) = cross_entropy(&z, 1);
        let h = 1e-3;
        for i in 0..3 {
            let mut up = z;
            up[i] += h;
            let mut down = z;
            down[i] -= h;
            let fd = (cross_entropy(&up, 1).0 - cross_entropy(&down, 1).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-3, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_model_accuracy_is_class_zero_fraction() {
        let ds = generate_shapes(&ShapesConfig { per_class: 5, ..Default::default() }).unwrap();
        let init = init_fixture(ds.class_names.clone(), 1).unwrap();
        let model = ModelGraph::new(
            init.input_shape().to_vec(),
            init.class_names().to_vec(),
            init.layers().iter().map(|l| Layer::zeroed(l.kind.clone())).collect(),
            init.protection_points().to_vec(),
        )
        .unwrap();
        let acc = evaluate_accuracy(&model, &ds).unwrap();
        assert_eq!(acc.correct(), 5);
        assert_eq!(acc.accuracy(), 1.0 / 6.0);
        let empty = ds.subset(&[], "").unwrap();
        assert!(evaluate_accuracy(&model, &empty).is_err());
    }

    #[test]
    fn fixture_topology() {
        let names = (0..6).map(|i| i.to_string()).collect();
        let m = init_fixture(names, 3).unwrap();
        assert_eq!(m.protection_points(), &[1, 2, 4, 5, 8, 10]);
        assert_eq!(m.output_shape(5), &[16, 4, 4]);
        let w = m.layers()[7].params[0].data();
        let lim = libm::sqrtf(1.0 / 256.0);
        assert!(w.iter().all(|v| v.abs() <= lim));
        assert!(m.layers()[7].params[1].data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn huge_learning_rate_fails_or_stays_bad() {
        let ds = generate_shapes(&ShapesConfig { per_class: 10, ..Default::default() }).unwrap();
        let (train, test) = ds.parity_split();
        match train_fixture(&train, Some(&test), &TrainConfig { seed: 42, epochs: 2, lr: 10.0 }) {
            Err(Error::Diverged { .. }) => {}
            Ok((_, report)) => assert!(report.test_accuracy.unwrap() < 0.5, "{report:?}"),
            Err(e) => panic!("{e}"),
        }
    }
}
