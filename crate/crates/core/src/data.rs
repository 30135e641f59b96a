//! Dataset ingestion: MNIST IDX files, CIFAR-10 binary batches, and small
//! synthetic sets used by tests.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Synthetic,
}

/// Images in CHW layout with pixel values normalized to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pixels: Vec<f32>,
    labels: Vec<u8>,
}

impl ImageSet {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        let size = channels * height * width;
        if pixels.len() != size * labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for {} images of {size}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_size();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The first `n` images.
    pub fn truncated(&self, n: usize) -> ImageSet {
        let n = n.min(self.len());
        ImageSet {
            pixels: self.pixels[..n * self.image_size()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..*self
        }
    }

    /// Flattened images as a feature set.
    pub fn to_features(&self) -> FeatureSet {
        FeatureSet {
            dim: self.image_size(),
            values: self.pixels.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Flat feature vectors with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    values: Vec<f32>,
    labels: Vec<u8>,
}

impl FeatureSet {
    pub fn new(dim: usize, values: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if values.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} samples of width {dim}",
                values.len(),
                labels.len()
            )));
        }
        Ok(Self { dim, values, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sample_f64(&self, i: usize) -> Vec<f64> {
        self.sample(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        FeatureSet {
            dim: self.dim,
            values,
            labels,
        }
    }

    /// Elementwise transform of every feature.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> FeatureSet {
        FeatureSet {
            dim: self.dim,
            values: self.values.iter().map(|&v| f(v)).collect(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub kind: DatasetKind,
    pub train: ImageSet,
    pub test: ImageSet,
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated IDX header"))
}

/// Parses an IDX3 image file (28×28 unsigned bytes).
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, Vec<f32>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != MNIST_IMAGE_MAGIC {
        return Err(Error::format(path, format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    if rows != 28 || cols != 28 {
        return Err(Error::format(path, format!("expected 28×28 images, got {rows}×{cols}")));
    }
    let payload = &bytes[16..];
    let expected = count * rows * cols;
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header implies {expected}", payload.len()),
        ));
    }
    Ok((count, payload.iter().map(|&b| f32::from(b) / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != MNIST_LABEL_MAGIC {
        return Err(Error::format(path, format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header implies {count}", payload.len()),
        ));
    }
    Ok(payload.to_vec())
}

pub fn load_mnist_split(images: &Path, labels: &Path) -> Result<ImageSet> {
    let (count, pixels) = parse_idx_images(&std::fs::read(images)?, images)?;
    let labels_v = parse_idx_labels(&std::fs::read(labels)?, labels)?;
    if labels_v.len() != count {
        return Err(Error::format(
            labels,
            format!("{} labels for {count} images", labels_v.len()),
        ));
    }
    ImageSet::new(1, 28, 28, pixels, labels_v)
}

/// Loads the four standard MNIST files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<DatasetHandle> {
    Ok(DatasetHandle {
        kind: DatasetKind::Mnist,
        train: load_mnist_split(
            &dir.join("train-images-idx3-ubyte"),
            &dir.join("train-labels-idx1-ubyte"),
        )?,
        test: load_mnist_split(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?,
    })
}

/// One CIFAR-10 binary batch: records of 1 label byte + 3072 CHW pixels.
pub fn parse_cifar10_batch(bytes: &[u8], path: &Path) -> Result<ImageSet> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::format(
            path,
            format!("size {} is not a multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
        ));
    }
    let count = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(count);
    let mut pixels = Vec::with_capacity(count * (CIFAR_RECORD_BYTES - 1));
    for record in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        if record[0] > 9 {
            return Err(Error::format(path, format!("label {} out of range", record[0])));
        }
        labels.push(record[0]);
        pixels.extend(record[1..].iter().map(|&b| f32::from(b) / 255.0));
    }
    ImageSet::new(3, 32, 32, pixels, labels)
}

pub fn load_cifar10_batch(path: &Path) -> Result<ImageSet> {
    parse_cifar10_batch(&std::fs::read(path)?, path)
}

fn concat(sets: Vec<ImageSet>) -> Result<ImageSet> {
    let (c, h, w) = (sets[0].channels, sets[0].height, sets[0].width);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for s in sets {
        pixels.extend(s.pixels);
        labels.extend(s.labels);
    }
    ImageSet::new(c, h, w, pixels, labels)
}

/// Loads `data_batch_1..5.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<DatasetHandle> {
    let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    let train = concat(train.iter().map(|p| load_cifar10_batch(p)).collect::<Result<_>>()?)?;
    Ok(DatasetHandle {
        kind: DatasetKind::Cifar10,
        train,
        test: load_cifar10_batch(&dir.join("test_batch.bin"))?,
    })
}

/// The four-point XOR truth table with inputs encoded as ±1 and labels 0/1.
pub fn xor_features() -> FeatureSet {
    FeatureSet::new(2, vec![-1.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0], vec![0, 1, 1, 0]).expect("static shape")
}

/// Gaussian blobs around random class prototypes in [0, 1]^dim.
pub fn synthetic_blobs(rng: &mut impl Rng, samples: usize, dim: usize, classes: usize, noise: f32) -> FeatureSet {
    let prototypes: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..dim).map(|_| if rng.gen::<bool>() { 0.8 } else { 0.2 }).collect())
        .collect();
    let mut values = Vec::with_capacity(samples * dim);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let class = i % classes;
        labels.push(class as u8);
        for &p in &prototypes[class] {
            let jitter: f32 = rng.gen_range(-1.0..1.0) * noise;
            values.push((p + jitter).clamp(0.0, 1.0));
        }
    }
    FeatureSet::new(dim, values, labels).expect("consistent shape")
}

/// Synthetic image set on a black background: each class is a bright
/// horizontal bar (plus a vertical bar in channel 0) at a class-specific
/// position, with uniform noise on the bar pixels.
pub fn synthetic_images(rng: &mut impl Rng, samples: usize, channels: usize, side: usize, classes: usize) -> ImageSet {
    let size = channels * side * side;
    let mut pixels = Vec::with_capacity(samples * size);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let class = i % classes;
        labels.push(class as u8);
        let row = (class * side) / classes.max(1);
        for c in 0..channels {
            for y in 0..side {
                for x in 0..side {
                    let on_bar = y == row || (c == 0 && x == row);
                    pixels.push(if on_bar { 0.9 + rng.gen_range(-0.1f32..0.1) } else { 0.0 });
                }
            }
        }
    }
    ImageSet::new(channels, side, side, pixels, labels).expect("consistent shape")
}
