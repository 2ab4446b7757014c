//! Dataset ingestion (IDX for MNIST/FashionMNIST, binary batches for
//! CIFAR-10) and seeded train/validation splitting.
//!
//! Pixels are scaled to `[0, 1]` by dividing by 255; no centering is applied.

use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const NUM_CLASSES: usize = 10;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_PIXELS: usize = 3072;
const CIFAR_RECORD: usize = CIFAR_PIXELS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        })
    }
}

/// Labeled samples, one feature row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f32>,
    labels: Vec<usize>,
    num_classes: usize,
    split_tag: SplitTag,
}

impl Dataset {
    /// Builds a dataset after checking row/label agreement and label range.
    pub fn new(features: Array2<f32>, labels: Vec<usize>, num_classes: usize, split_tag: SplitTag) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Consistency(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            split_tag,
        })
    }

    pub fn with_split_tag(mut self, tag: SplitTag) -> Self {
        self.split_tag = tag;
        self
    }

    pub fn features(&self) -> ArrayView2<'_, f32> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Per-class sample counts.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize], tag: SplitTag) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split_tag: tag,
        }
    }

    /// The first `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx, self.split_tag)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]])
}

/// Parses an IDX image file (`0x00000803`): returns (count, pixels per image, pixel bytes).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "IDX image file has {} bytes, header needs 16",
            bytes.len()
        )));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "IDX image magic is {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4) as usize;
    let pixels = be_u32(bytes, 8) as usize * be_u32(bytes, 12) as usize;
    let body = &bytes[16..];
    let expected = count
        .checked_mul(pixels)
        .ok_or_else(|| Error::Format("IDX image dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "IDX image body has {} bytes, header declares {count} x {pixels} = {expected}",
            body.len()
        )));
    }
    Ok((count, pixels, body))
}

/// Parses an IDX label file (`0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 8 {
        return Err(Error::Format(format!(
            "IDX label file has {} bytes, header needs 8",
            bytes.len()
        )));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "IDX label magic is {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4) as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "IDX label body has {} bytes, header declares {count}",
            body.len()
        )));
    }
    Ok(body)
}

/// Builds a dataset from raw IDX image and label bytes.
pub fn idx_from_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (count, pixels, body) = parse_idx_images(images)?;
    let label_bytes = parse_idx_labels(labels)?;
    if label_bytes.len() != count {
        return Err(Error::Consistency(format!(
            "{count} images but {} labels",
            label_bytes.len()
        )));
    }
    let features = Array2::from_shape_vec((count, pixels), body.iter().map(|&p| f32::from(p) / 255.0).collect())
        .expect("shape checked above");
    let labels = label_bytes.iter().map(|&l| usize::from(l)).collect();
    Dataset::new(features, labels, NUM_CLASSES, SplitTag::Train)
}

/// Loads an MNIST-style IDX image/label file pair. FashionMNIST uses the
/// same layout. The result is tagged `Train`; retag test files with
/// [`Dataset::with_split_tag`].
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_file(images_path.as_ref())?;
    let labels = read_file(labels_path.as_ref())?;
    idx_from_bytes(&images, &labels)
}

/// Parses CIFAR-10 binary batch records (1 label byte + 3072 pixel bytes).
pub fn cifar10_from_bytes(batches: &[&[u8]]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (b, bytes) in batches.iter().enumerate() {
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format(format!(
                "CIFAR-10 batch {b} has {} bytes, not a positive multiple of {CIFAR_RECORD}",
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            let label = record[0];
            if usize::from(label) >= NUM_CLASSES {
                return Err(Error::Consistency(format!(
                    "CIFAR-10 batch {b} contains label byte {label}"
                )));
            }
            labels.push(usize::from(label));
            pixels.extend(record[1..].iter().map(|&p| f32::from(p) / 255.0));
        }
    }
    let features = Array2::from_shape_vec((labels.len(), CIFAR_PIXELS), pixels).expect("record-sized rows");
    Dataset::new(features, labels, NUM_CLASSES, SplitTag::Train)
}

pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    if batch_paths.is_empty() {
        return Err(Error::Argument("no CIFAR-10 batch files given".into()));
    }
    let raw = batch_paths
        .iter()
        .map(|p| read_file(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<&[u8]> = raw.iter().map(Vec::as_slice).collect();
    cifar10_from_bytes(&views)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Partitions `0..n` into (train, validation) index sets via a seeded
/// uniform permutation. Validation gets `round(fraction * n)` indices.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let f = spec.validation_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Argument(format!("validation fraction {f} outside (0, 1)")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::stream_rng(spec.seed, seed::STREAM_SPLIT, 0));
    let n_val = (f * n as f64).round() as usize;
    let train = perm.split_off(n_val);
    Ok((train, perm))
}

/// Splits a training set into (train, validation) parts.
pub fn split(train: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (tr, va) = split_indices(train.len(), spec)?;
    Ok((
        train.select(&tr, SplitTag::Train),
        train.select(&va, SplitTag::Validation),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        v.extend(count.to_be_bytes());
        v.extend(rows.to_be_bytes());
        v.extend(cols.to_be_bytes());
        v.extend((0..(count * rows * cols) as usize).map(fill));
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend(IDX_LABELS_MAGIC.to_be_bytes());
        v.extend((labels.len() as u32).to_be_bytes());
        v.extend(labels);
        v
    }

    #[test]
    fn idx_round_values() {
        let images = idx_images(3, 2, 2, |i| (i * 20) as u8);
        let labels = idx_labels(&[0, 9, 4]);
        let ds = idx_from_bytes(&images, &labels).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels(), &[0, 9, 4]);
        assert_eq!(ds.features()[[1, 1]], 100.0 / 255.0);
        assert!(ds.features().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn idx_bad_magic() {
        let mut images = idx_images(1, 2, 2, |_| 0);
        images[3] = 0x01;
        let labels = idx_labels(&[0]);
        assert!(matches!(idx_from_bytes(&images, &labels), Err(Error::Format(_))));
        let images = idx_images(1, 2, 2, |_| 0);
        assert!(matches!(idx_from_bytes(&images, &images), Err(Error::Format(_))));
    }

    #[test]
    fn idx_truncated_images() {
        let mut images = idx_images(4, 2, 2, |_| 7);
        images.pop();
        let labels = idx_labels(&[0, 1, 2, 3]);
        assert!(matches!(idx_from_bytes(&images, &labels), Err(Error::Format(_))));
        assert!(matches!(idx_from_bytes(&images[..10], &labels), Err(Error::Format(_))));
    }

    #[test]
    fn idx_count_mismatch() {
        let images = idx_images(4, 2, 2, |_| 7);
        let labels = idx_labels(&[0, 1, 2]);
        assert!(matches!(idx_from_bytes(&images, &labels), Err(Error::Consistency(_))));
    }

    #[test]
    fn idx_label_out_of_range() {
        let images = idx_images(1, 1, 1, |_| 7);
        let labels = idx_labels(&[10]);
        assert!(matches!(idx_from_bytes(&images, &labels), Err(Error::Consistency(_))));
    }

    #[test]
    fn cifar_records() {
        let mut batch = Vec::new();
        for label in [3u8, 7] {
            batch.push(label);
            batch.extend((0..CIFAR_PIXELS).map(|i| (i % 256) as u8));
        }
        let ds = cifar10_from_bytes(&[&batch, &batch]).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dim(), 3072);
        assert_eq!(ds.labels(), &[3, 7, 3, 7]);
        assert_eq!(ds.features()[[0, 255]], 1.0);
        assert_eq!(ds.features()[[0, 256]], 0.0);
    }

    #[test]
    fn cifar_short_file() {
        let batch = vec![0u8; CIFAR_PIXELS];
        assert!(matches!(cifar10_from_bytes(&[&batch]), Err(Error::Format(_))));
    }

    #[test]
    fn cifar_bad_label() {
        let mut batch = vec![0u8; CIFAR_RECORD];
        batch[0] = 10;
        assert!(matches!(cifar10_from_bytes(&[&batch]), Err(Error::Consistency(_))));
    }

    #[test]
    fn split_sizes_and_partition() {
        let (tr, va) = split_indices(
            60000,
            &SplitSpec {
                validation_fraction: 0.2,
                seed: 7,
            },
        )
        .unwrap();
        assert_eq!((tr.len(), va.len()), (48000, 12000));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert!(all.iter().copied().eq(0..60000));
    }

    #[test]
    fn split_deterministic() {
        let spec = SplitSpec {
            validation_fraction: 0.2,
            seed: 7,
        };
        assert_eq!(split_indices(1000, &spec).unwrap(), split_indices(1000, &spec).unwrap());
        let other = SplitSpec { seed: 8, ..spec };
        assert_ne!(
            split_indices(1000, &spec).unwrap(),
            split_indices(1000, &other).unwrap()
        );
    }

    #[test]
    fn split_rejects_fraction() {
        for f in [1.5, 0.0, 1.0, -0.1, f64::NAN] {
            let spec = SplitSpec {
                validation_fraction: f,
                seed: 1,
            };
            assert!(matches!(split_indices(10, &spec), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn split_tags() {
        let ds = idx_from_bytes(&idx_images(10, 1, 1, |i| i as u8), &idx_labels(&[1; 10])).unwrap();
        let (tr, va) = split(
            &ds,
            &SplitSpec {
                validation_fraction: 0.3,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(tr.split_tag(), SplitTag::Train);
        assert_eq!(va.split_tag(), SplitTag::Validation);
        assert_eq!((tr.len(), va.len()), (7, 3));
    }
}
