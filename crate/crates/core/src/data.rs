//! Datasets: CIFAR-10 binary batches, IDX image/label pairs, a synthetic
//! two-Gaussian generator and seeded train/validation/test splits.
//!
//! All inputs live in `[0, 1]` after normalization; attack radii are
//! measured in that space.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{seed, Error, Result};

/// Per-coordinate map `normalized = (raw - offset) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub offset: f64,
    pub scale: f64,
}

impl AffineTransform {
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.offset) * self.scale
    }

    pub fn invert(&self, normalized: f64) -> f64 {
        normalized / self.scale + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
    /// SHA-256 of the source bytes, for datasets read from disk.
    pub source_checksum: Option<String>,
    /// Raw-to-normalized transform, for generated datasets.
    pub transform: Option<AffineTransform>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = Self {
            inputs,
            labels,
            num_classes,
            name: name.into(),
            source_checksum: None,
            transform: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.labels.len() {
            return Err(Error::Validation(format!(
                "{} inputs but {} labels",
                self.inputs.len(),
                self.labels.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        let dim = self.dim();
        if self.inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::Validation("inputs have differing lengths".into()));
        }
        if self.inputs.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("input value outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.inputs.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: name.into(),
            source_checksum: self.source_checksum.clone(),
            transform: self.transform,
        }
    }

    pub(crate) fn require_nonempty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            return Err(Error::contract(format!("{what}: dataset `{}` is empty", self.name)));
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub const CIFAR_PIXELS: usize = 3072;
pub const CIFAR_RECORD: usize = CIFAR_PIXELS + 1;

/// Reads one CIFAR-10 binary batch: records of one label byte followed by
/// 3072 channel-major pixel bytes.
pub fn load_cifar10_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = read(path)?;
    parse_cifar10(&bytes, &path.display().to_string())
}

pub fn parse_cifar10(bytes: &[u8], name: &str) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let expected = bytes.len().div_ceil(CIFAR_RECORD).max(1) * CIFAR_RECORD;
        return Err(Error::Format(format!(
            "{name}: size {} is not a positive multiple of {CIFAR_RECORD} (expected {expected} bytes)",
            bytes.len()
        )));
    }
    let mut inputs = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format(format!("{name}: record {i} has label byte {}", rec[0])));
        }
        labels.push(rec[0] as usize);
        inputs.push(rec[1..].iter().map(|&p| p as f64 / 255.0).collect());
    }
    Ok(Dataset {
        inputs,
        labels,
        num_classes: 10,
        name: name.to_string(),
        source_checksum: Some(sha256_hex(bytes)),
        transform: None,
    })
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: header truncated")))
}

/// Reads an IDX image file (magic `0x00000803`) and its label file (magic
/// `0x00000801`).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read(ip)?;
    let labels = read(lp)?;
    parse_idx(&images, &labels, &ip.display().to_string())
}

pub fn parse_idx(images: &[u8], labels: &[u8], name: &str) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!(
            "images: magic {magic:#010x}, expected {IDX_IMAGES:#010x}"
        )));
    }
    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!(
            "labels: magic {magic:#010x}, expected {IDX_LABELS:#010x}"
        )));
    }
    let count = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let label_count = be_u32(labels, 4, "labels")? as usize;
    if count != label_count {
        return Err(Error::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let pixels = rows * cols;
    if count == 0 || pixels == 0 {
        return Err(Error::Format("empty IDX file".into()));
    }
    let body = &images[16..];
    if body.len() != count * pixels {
        return Err(Error::Format(format!(
            "images: expected {} pixel bytes, found {}",
            count * pixels,
            body.len()
        )));
    }
    let label_body = &labels[8..];
    if label_body.len() != count {
        return Err(Error::Format(format!(
            "labels: expected {count} label bytes, found {}",
            label_body.len()
        )));
    }
    let inputs = body
        .chunks_exact(pixels)
        .map(|img| img.iter().map(|&p| p as f64 / 255.0).collect())
        .collect();
    let labels_vec: Vec<usize> = label_body.iter().map(|&l| l as usize).collect();
    let num_classes = labels_vec.iter().max().map_or(2, |m| (m + 1).max(2));
    let mut checksum = Sha256::new();
    checksum.update(images);
    checksum.update(labels);
    Ok(Dataset {
        inputs,
        labels: labels_vec,
        num_classes,
        name: name.to_string(),
        source_checksum: Some(hex::encode(checksum.finalize())),
        transform: None,
    })
}

/// Clip radius of the generator, in units of sigma beyond the class mean.
pub const GAUSSIAN_CLIP_SIGMAS: f64 = 4.0;

/// Two isotropic Gaussians with means `+-(margin / 2) e_1`, `n / 2` points
/// each (class 0 at `+`, class 1 at `-`, interleaved).
///
/// Raw coordinates are clipped to `[-R, R]` with
/// `R = margin / 2 + 4 sigma` and mapped affinely onto `[0, 1]`; the map is
/// stored in [`Dataset::transform`]. The Bayes classifier thresholds the
/// first coordinate at the normalized image of 0, i.e. 0.5.
pub fn gen_two_gaussians(n: usize, dim: usize, margin: f64, sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Validation(format!("n must be even and positive, got {n}")));
    }
    if dim < 2 {
        return Err(Error::Validation(format!("dim must be >= 2, got {dim}")));
    }
    if !(margin > 0.0 && sigma > 0.0) {
        return Err(Error::Validation("margin and sigma must be positive".into()));
    }
    let radius = margin / 2.0 + GAUSSIAN_CLIP_SIGMAS * sigma;
    let transform = AffineTransform {
        offset: -radius,
        scale: 1.0 / (2.0 * radius),
    };
    let noise = Normal::new(0.0, sigma).expect("sigma > 0");
    let mut rng = seed::rng(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let mean = if label == 0 { margin / 2.0 } else { -margin / 2.0 };
        let x = (0..dim)
            .map(|j| {
                let centre = if j == 0 { mean } else { 0.0 };
                let raw = (centre + noise.sample(&mut rng)).clamp(-radius, radius);
                transform.apply(raw).clamp(0.0, 1.0)
            })
            .collect();
        inputs.push(x);
        labels.push(label);
    }
    Ok(Dataset {
        inputs,
        labels,
        num_classes: 2,
        name: format!("gaussians-n{n}-d{dim}-m{margin}-s{sigma}-seed{seed}"),
        source_checksum: None,
        transform: Some(transform),
    })
}

/// Train/validation/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle, then floor counts for validation and test; the
/// remainder goes to training.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "split fractions {fractions:?} are not a simplex"
        )));
    }
    let n = dataset.len();
    let n_val = (n as f64 * fractions[1]).floor() as usize;
    let n_test = (n as f64 * fractions[2]).floor() as usize;
    let n_train = n - n_val - n_test;
    for (name, count, frac) in [
        ("train", n_train, fractions[0]),
        ("val", n_val, fractions[1]),
        ("test", n_test, fractions[2]),
    ] {
        if frac > 0.0 && count == 0 {
            return Err(Error::contract(format!(
                "{name} fraction {frac} of {n} examples rounds to an empty split"
            )));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let base = &dataset.name;
    Ok(Splits {
        train: dataset.subset(&order[..n_train], format!("{base}/train")),
        val: dataset.subset(&order[n_train..n_train + n_val], format!("{base}/val")),
        test: dataset.subset(&order[n_train + n_val..], format!("{base}/test")),
    })
}
