//! Labelled image sets and the synthetic shapes generator.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamKey};
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 28;

pub const SHAPE_CLASSES: [&str; 6] = [
    "filled_square",
    "hollow_square",
    "disk",
    "ring",
    "plus_cross",
    "diagonal_cross",
];

/// Images `[1, H, W]` with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub class_names: Vec<String>,
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(id: String, class_names: Vec<String>, images: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Config(alloc::format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Config(alloc::format!(
                "label {l} outside {} classes",
                class_names.len()
            )));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|t| t.shape() != first.shape()) {
                return Err(Error::Config("images of mixed shape".into()));
            }
        }
        Ok(Dataset {
            id,
            class_names,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], suffix: &str) -> Result<Dataset> {
        let mut images = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Config(alloc::format!(
                    "index {i} outside dataset of {}",
                    self.len()
                )));
            }
            images.push(self.images[i].clone());
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            id: alloc::format!("{}{suffix}", self.id),
            class_names: self.class_names.clone(),
            images,
            labels,
        })
    }

    /// Split by per-class ordinal parity: sample `i` has ordinal `i / K`;
    /// even ordinals train, odd ordinals test.
    pub fn parity_split(&self) -> (Dataset, Dataset) {
        let k = self.num_classes().max(1);
        let (train, test): (Vec<usize>, Vec<usize>) =
            (0..self.len()).partition(|i| (i / k).is_multiple_of(2));
        (
            self.subset(&train, "/train").expect("indices in range"),
            self.subset(&test, "/test").expect("indices in range"),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapesConfig {
    pub seed: u64,
    pub per_class: usize,
    /// Uniform noise amplitude added to every pixel before clamping to [0, 1].
    pub noise: f32,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        ShapesConfig {
            seed: 42,
            per_class: 200,
            noise: 0.1,
        }
    }
}

/// Sample `index` of the synthetic set; its class is `index % 6`.
pub fn shape_sample(seed: u64, index: usize, noise: f32) -> (Tensor, usize) {
    let class = index % SHAPE_CLASSES.len();
    let mut rng = StreamKey::new(seed, Purpose::Dataset, 0, index as u64).rng();
    let cx = 14.0 + rng.gen_range(-3.0f32..=3.0);
    let cy = 14.0 + rng.gen_range(-3.0f32..=3.0);
    let r = rng.gen_range(6.0f32..=10.0);
    let t = rng.gen_range(1.5f32..=3.0);
    let intensity = rng.gen_range(0.7f32..=1.0);
    let mut img = Tensor::zeros(&[1, IMAGE_SIZE, IMAGE_SIZE]);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let dx = x as f32 + 0.5 - cx;
            let dy = y as f32 + 0.5 - cy;
            let (ax, ay) = (dx.abs(), dy.abs());
            let cheb = ax.max(ay);
            let d2 = dx * dx + dy * dy;
            let on = match class {
                0 => cheb <= r,
                1 => cheb <= r && cheb >= r - t,
                2 => d2 <= r * r,
                3 => d2 <= r * r && d2 >= (r - t) * (r - t),
                4 => (ax <= t * 0.5 && ay <= r) || (ay <= t * 0.5 && ax <= r),
                _ => (ax - ay).abs() <= t * 0.5 && cheb <= r,
            };
            let base = if on { intensity } else { 0.0 };
            let n = if noise > 0.0 {
                rng.gen_range(-noise..=noise)
            } else {
                0.0
            };
            img[y * IMAGE_SIZE + x] = (base + n).clamp(0.0, 1.0);
        }
    }
    (img, class)
}

/// Deterministic synthetic shapes set with `per_class` samples of each class.
pub fn generate_shapes(cfg: &ShapesConfig) -> Result<Dataset> {
    if cfg.per_class == 0 {
        return Err(Error::Config("per-class count must be at least 1".into()));
    }
    let n = cfg.per_class * SHAPE_CLASSES.len();
    let (images, labels) = (0..n).map(|i| shape_sample(cfg.seed, i, cfg.noise)).unzip();
    Dataset::new(
        alloc::format!("shapes-s{}-n{}-z{}", cfg.seed, cfg.per_class, cfg.noise),
        SHAPE_CLASSES.iter().map(|s| s.to_string()).collect(),
        images,
        labels,
    )
}
