//! Labelled image datasets: IDX loading, standardization, synthetic blobs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "PANNING_DATA_DIR";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad magic {found:#010x} at byte 0, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated at byte {offset} (need {needed} bytes)")]
    Truncated { path: PathBuf, offset: usize, needed: usize },
    #[error("image count {images} differs from label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("class {class} has {available} samples, {requested} requested")]
    NotEnoughSamples { class: usize, available: usize, requested: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Images `[n, ...]` with integer labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self, DataError> {
        let n = images.shape().first().copied().unwrap_or(0);
        if n != labels.len() {
            return Err(DataError::CountMismatch { images: n, labels: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Invalid(format!("label {bad} outside {classes} classes")));
        }
        Ok(Self { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape (everything after the leading axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// The first `n` samples (all of them when `n` is 0 or too large).
    pub fn head(&self, n: usize) -> Dataset {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        Dataset {
            images: self.images.slice_rows(0, n),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// Sample indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l].push(i);
        }
        by
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Scalar mean/std standardization fitted on a training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Self {
        let d = train.images.data();
        let n = d.len().max(1) as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt().max(1e-12) }
    }

    pub fn apply(&self, data: &mut Dataset) {
        let (m, s) = (self.mean, self.std);
        data.images.data_mut().iter_mut().for_each(|v| *v = (*v - m) / s);
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(DataError::Truncated { path: path.to_path_buf(), offset, needed: 4 })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic { path: path.to_path_buf(), found, expected });
    }
    Ok(())
}

/// Raw pixel bytes and their `[n, rows, cols]` header.
pub fn read_idx_images(path: &Path) -> Result<(Vec<usize>, Vec<u8>), DataError> {
    let bytes = read(path)?;
    check_magic(&bytes, IMAGES_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let needed = n * rows * cols;
    if bytes.len() < 16 + needed {
        return Err(DataError::Truncated { path: path.to_path_buf(), offset: bytes.len(), needed: 16 + needed });
    }
    Ok((vec![n, rows, cols], bytes[16..16 + needed].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read(path)?;
    check_magic(&bytes, LABELS_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() < 8 + n {
        return Err(DataError::Truncated { path: path.to_path_buf(), offset: bytes.len(), needed: 8 + n });
    }
    Ok(bytes[8..8 + n].to_vec())
}

/// Encodes images as an IDX3 file body.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an IDX image/label pair with pixels scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let (dims, pixels) = read_idx_images(images)?;
    let raw_labels = read_idx_labels(labels)?;
    if dims[0] != raw_labels.len() {
        return Err(DataError::CountMismatch { images: dims[0], labels: raw_labels.len() });
    }
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let images = Tensor::from_vec(&[dims[0], 1, dims[1], dims[2]], data);
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(images, labels, classes)
}

/// Which IDX-distributed dataset to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFamily {
    Mnist,
    FashionMnist,
}

impl ImageFamily {
    pub fn dir_name(self) -> &'static str {
        match self {
            ImageFamily::Mnist => "mnist",
            ImageFamily::FashionMnist => "fashion-mnist",
        }
    }
}

/// Resolves the dataset root: explicit value, then [`DATA_DIR_ENV`], then `./data`.
pub fn data_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

/// Train and test splits, both standardized with training-split statistics.
pub fn load_family(root: &Path, family: ImageFamily) -> Result<(Dataset, Dataset, Standardizer), DataError> {
    let dir = root.join(family.dir_name());
    let mut train = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
    let mut test = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
    let stats = Standardizer::fit(&train);
    stats.apply(&mut train);
    stats.apply(&mut test);
    Ok((train, test, stats))
}

/// Gaussian blobs: `classes × per_class` samples in `dims` dimensions.
///
/// Class means are random directions scaled so that any two means sit roughly
/// `separation` standard deviations apart; noise is unit isotropic.
pub fn synthetic_classification(
    classes: usize,
    per_class: usize,
    dims: usize,
    separation: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x * radius / norm).collect()
        })
        .collect();
    let mut data = Vec::with_capacity(classes * per_class * dims);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + z);
            }
            labels.push(c);
        }
    }
    let images = Tensor::from_vec(&[classes * per_class, dims], data);
    Dataset::new(images, labels, classes).expect("consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_shape_and_determinism() {
        let d = synthetic_classification(2, 5, 3, 5.0, 1);
        assert_eq!(d.len(), 10);
        assert_eq!(d.class_histogram(), vec![5, 5]);
        assert_eq!(d, synthetic_classification(2, 5, 3, 5.0, 1));
        assert_ne!(d, synthetic_classification(2, 5, 3, 5.0, 2));
    }

    #[test]
    fn idx_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        fs::write(&img, encode_idx_images(2, 2, &[1, 2, 3, 4, 5, 6, 7, 8])).unwrap();
        fs::write(&lbl, encode_idx_labels(&[3, 9])).unwrap();
        let d = load_idx(&img, &lbl).unwrap();
        assert_eq!(d.images.shape(), &[2, 1, 2, 2]);
        assert_eq!(d.labels, vec![3, 9]);

        // Labels file given in place of images.
        let err = load_idx(&lbl, &lbl).unwrap_err();
        assert!(matches!(err, DataError::BadMagic { found: LABELS_MAGIC, .. }), "{err}");

        let mut short = encode_idx_images(2, 2, &[1, 2, 3, 4, 5, 6, 7, 8]);
        short.truncate(20);
        fs::write(&img, short).unwrap();
        let err = load_idx(&img, &lbl).unwrap_err();
        assert!(matches!(err, DataError::Truncated { offset: 20, .. }), "{err}");
    }

    #[test]
    fn standardizer_uses_train_statistics() {
        let train = Dataset::new(Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 0.0, 1.0]), vec![0, 1], 2).unwrap();
        let mut test = Dataset::new(Tensor::from_vec(&[1, 2], vec![1.0, 1.0]), vec![0], 2).unwrap();
        let s = Standardizer::fit(&train);
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.std, 0.5);
        s.apply(&mut test);
        assert_eq!(test.images.data(), &[1.0, 1.0]);
    }
}
