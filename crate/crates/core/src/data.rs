//! Datasets: MNIST IDX files, CIFAR-10 binary batches, and a synthetic
//! two-class set whose ground truth is a [`BandOracle`].

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::adversarial::{BandOracle, Classifier, LabelingOracle, OracleLabel};
use crate::error::{invalid, Error, Result};
use crate::model::{LabeledBatch, MlpParams};
use crate::seed::rng_from;
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3072;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub data: LabeledBatch,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, data: LabeledBatch, n_classes: usize) -> Result<Self> {
        if let Some(&bad) = data.labels().iter().find(|&&y| y >= n_classes) {
            return invalid(format!("label {bad} outside {n_classes} classes"));
        }
        Ok(Self { name: name.into(), data, n_classes })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// `n` rows drawn without replacement, with per-class counts proportional
    /// to the class frequencies (largest-remainder rounding). Rows keep their
    /// original relative order.
    pub fn stratified_subset(&self, n: usize, seed: u64) -> Result<Self> {
        if n > self.len() {
            return invalid(format!("requested {n} rows from a dataset of {}", self.len()));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.n_classes];
        for (i, &y) in self.data.labels().iter().enumerate() {
            by_class[y].push(i);
        }
        let total = self.len() as f64;
        let exact: Vec<f64> = by_class.iter().map(|c| n as f64 * c.len() as f64 / total).collect();
        let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..self.n_classes).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut missing = n - quota.iter().sum::<usize>();
        for &c in order.iter().cycle() {
            if missing == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                missing -= 1;
            }
        }
        let mut rng = rng_from(seed);
        let mut picked = Vec::with_capacity(n);
        for (members, &q) in by_class.iter_mut().zip(&quota) {
            members.shuffle(&mut rng);
            picked.extend_from_slice(&members[..q]);
        }
        picked.sort_unstable();
        Ok(Self { name: self.name.clone(), data: self.data.select(&picked), n_classes: self.n_classes })
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("IDX header truncated at byte {at}")))
}

/// Parsed IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")));
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let body = &bytes[16..];
    let expected = n.checked_mul(rows).and_then(|v| v.checked_mul(cols));
    if expected != Some(body.len()) {
        return Err(Error::Format(format!(
            "IDX image payload has {} bytes, header promises {n}x{rows}x{cols}",
            body.len()
        )));
    }
    Ok((n, rows, cols, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}")));
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!("IDX label payload has {} bytes, header promises {n}", body.len())));
    }
    Ok(body)
}

pub fn encode_idx_images(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn scaled(pixels: &[u8]) -> Vec<f64> {
    pixels.iter().map(|&p| p as f64 / 255.0).collect()
}

/// Decodes an IDX image/label pair held in memory.
pub fn mnist_from_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Format(format!("{n} images but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= 10) {
        return Err(Error::Format(format!("MNIST label {bad} is not a digit")));
    }
    let inputs = Tensor::new(vec![n, rows * cols], scaled(pixels))?;
    let labels = labels.iter().map(|&l| l as usize).collect();
    Dataset::new("mnist", LabeledBatch::new(inputs, labels)?, 10)
}

pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    mnist_from_bytes(&images, &labels)
}

pub fn cifar10_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::Format(format!(
            "CIFAR-10 batch length {} is not a positive multiple of {CIFAR_RECORD_BYTES}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut data = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        if rec[0] >= 10 {
            return Err(Error::Format(format!("CIFAR-10 label {} out of range", rec[0])));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
    }
    let inputs = Tensor::new(vec![n, 3072], data)?;
    Dataset::new("cifar10", LabeledBatch::new(inputs, labels)?, 10)
}

/// Concatenates one or more CIFAR-10 binary batch files.
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut bytes = Vec::new();
    for p in paths {
        bytes.extend(fs::read(p)?);
    }
    cifar10_from_bytes(&bytes)
}

/// Maps between oracle coordinates `[−1,1]²` and model features `[0,1]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLinear {
    pub oracle: BandOracle,
    /// Sample points in oracle coordinates, row-aligned with the dataset.
    pub originals: Vec<[f64; 2]>,
}

impl SyntheticLinear {
    pub fn to_model(x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| (v + 1.0) / 2.0).collect()
    }

    pub fn to_oracle(u: &[f64]) -> Vec<f64> {
        u.iter().map(|v| 2.0 * v - 1.0).collect()
    }

    /// Wraps a network trained on model features as a classifier over oracle
    /// coordinates.
    pub fn model_classifier(params: &MlpParams) -> impl Classifier + '_ {
        move |x: &[f64]| params.classify(&Self::to_model(x))
    }
}

/// `n` points uniform on `[−1,1]²`, rejecting unlabelable ones, labeled by
/// the default band oracle.
pub fn make_synthetic_linear(n: usize, seed: u64) -> Result<(Dataset, SyntheticLinear)> {
    if n < 2 {
        return invalid("synthetic dataset needs at least two points");
    }
    let oracle = BandOracle::default();
    let mut rng = rng_from(seed);
    let mut originals = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    while originals.len() < n {
        let p = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
        let OracleLabel::Label(y) = oracle.label(&p) else {
            continue;
        };
        features.extend(SyntheticLinear::to_model(&p));
        labels.push(y);
        originals.push(p);
    }
    let batch = LabeledBatch::new(Tensor::new(vec![n, 2], features)?, labels)?;
    Ok((Dataset::new("synthetic_linear", batch, 2)?, SyntheticLinear { oracle, originals }))
}
