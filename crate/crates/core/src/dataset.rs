//! IDX image/label loading, seeded splits and mini-batch ordering.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    Magic { found: u32, expected: u32 },
    #[error("file truncated: header promises {expected} bytes of data, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is outside 0..{classes}")]
    Label { index: usize, label: u8, classes: usize },
    #[error("cannot take {requested} samples from a set of {available}")]
    Size { requested: usize, available: usize },
}

/// Images with pixel values in `[0, 1]`, stored sample-major with `x`
/// varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DatasetError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DatasetError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(found: u32, expected: u32) -> Result<(), DatasetError> {
    if found != expected {
        return Err(DatasetError::Magic { found, expected });
    }
    Ok(())
}

/// Parses an IDX image file into `(count, width, height, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>), DatasetError> {
    check_magic(be_u32(bytes, 0)?, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = count * rows * cols;
    let data = &bytes[16..];
    if data.len() != expected {
        return Err(DatasetError::Truncated {
            expected,
            found: data.len(),
        });
    }
    let pixels = data.iter().map(|&b| b as f32 / 255.0).collect();
    Ok((count, cols, rows, pixels))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DatasetError> {
    check_magic(be_u32(bytes, 0)?, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let data = &bytes[8..];
    if data.len() != count {
        return Err(DatasetError::Truncated {
            expected: count,
            found: data.len(),
        });
    }
    Ok(data.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_idx(images_path: &Path, labels_path: &Path, classes: usize) -> Result<ImageSet, DatasetError> {
    let (_, width, height, pixels) = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path)?)?;
    ImageSet::new(width, height, classes, pixels, labels)
}

/// Standard MNIST file names inside `dir`.
pub fn load_mnist(dir: &Path, test: bool) -> Result<ImageSet, DatasetError> {
    let prefix = if test { "t10k" } else { "train" };
    load_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        10,
    )
}

impl ImageSet {
    pub fn new(
        width: usize,
        height: usize,
        classes: usize,
        pixels: Vec<f32>,
        labels: Vec<u8>,
    ) -> Result<Self, DatasetError> {
        let images = pixels.len() / (width * height).max(1);
        if images != labels.len() || pixels.len() != images * width * height {
            return Err(DatasetError::CountMismatch {
                images,
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
            return Err(DatasetError::Label { index, label, classes });
        }
        Ok(ImageSet {
            width,
            height,
            classes,
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

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn image_len(&self) -> usize {
        self.width * self.height
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    fn select(&self, indices: &[usize]) -> ImageSet {
        let n = self.image_len();
        let mut pixels = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        ImageSet {
            width: self.width,
            height: self.height,
            classes: self.classes,
            pixels,
            labels,
        }
    }

    fn permutation(&self, seed: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx
    }

    /// Seeded random partition into `train_count` training samples and the
    /// remaining validation samples.
    pub fn split(&self, train_count: usize, seed: u64) -> Result<(ImageSet, ImageSet), DatasetError> {
        if train_count >= self.len() {
            return Err(DatasetError::Size {
                requested: train_count,
                available: self.len(),
            });
        }
        let idx = self.permutation(seed);
        Ok((self.select(&idx[..train_count]), self.select(&idx[train_count..])))
    }

    /// A seeded random subset of `count` samples.
    pub fn subset(&self, count: usize, seed: u64) -> Result<ImageSet, DatasetError> {
        if count > self.len() {
            return Err(DatasetError::Size {
                requested: count,
                available: self.len(),
            });
        }
        let idx = self.permutation(seed);
        Ok(self.select(&idx[..count]))
    }

    /// Centers every image on a zero canvas of the given size.
    pub fn pad(&self, width: usize, height: usize) -> Result<ImageSet, DatasetError> {
        if width < self.width || height < self.height {
            return Err(DatasetError::Size {
                requested: width * height,
                available: self.image_len(),
            });
        }
        let (ox, oy) = ((width - self.width) / 2, (height - self.height) / 2);
        let mut pixels = vec![0.0; self.len() * width * height];
        for i in 0..self.len() {
            let src = self.image(i);
            let dst = &mut pixels[i * width * height..(i + 1) * width * height];
            for y in 0..self.height {
                let row = &src[y * self.width..(y + 1) * self.width];
                let at = (y + oy) * width + ox;
                dst[at..at + self.width].copy_from_slice(row);
            }
        }
        Ok(ImageSet {
            width,
            height,
            classes: self.classes,
            pixels,
            labels: self.labels.clone(),
        })
    }

    /// Hex SHA-256 over shape, labels and pixel bits; workers must agree
    /// with the master on this before evaluating anything.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.width, self.height, self.classes, self.len()] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(&self.labels);
        for p in &self.pixels {
            h.update(p.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// How the training/validation sets are carved out of the full training
/// file. Workers rebuild the same sets from the same spec.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_count: usize,
    pub split_seed: u64,
    /// Train on a random subset of this many training images.
    pub train_subset: Option<usize>,
    pub subset_seed: u64,
    /// Zero-pad images to this size.
    pub pad_to: Option<(usize, usize)>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_count: 50_000,
            split_seed: 0,
            train_subset: None,
            subset_seed: 0,
            pad_to: None,
        }
    }
}

/// Training and validation sets used during a search.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: ImageSet,
    pub validation: ImageSet,
}

impl SplitSpec {
    pub fn apply(&self, full: &ImageSet) -> Result<DataSplit, DatasetError> {
        let full = match self.pad_to {
            Some((w, h)) => full.pad(w, h)?,
            None => full.clone(),
        };
        let (mut train, validation) = full.split(self.train_count, self.split_seed)?;
        if let Some(n) = self.train_subset {
            train = train.subset(n, self.subset_seed)?;
        }
        Ok(DataSplit { train, validation })
    }
}

/// Sample indices for one epoch, reshuffled by `epoch_seed` and cut into
/// full batches; a ragged remainder is dropped.
pub fn batches(len: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    idx.chunks_exact(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
