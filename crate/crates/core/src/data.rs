//! MNIST IDX ingestion: big-endian IDX parsing, 28×28 → 32×32 zero
//! padding, and per-pixel standardization with training-split statistics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::Dataset;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Zero border added on each side when going from 28×28 to 32×32.
pub const MNIST_PAD: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(
                what,
                format!("truncated at byte offset {offset} (file has {} bytes)", bytes.len()),
            )
        })
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, "images.magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            "images.magic",
            format!("byte offset 0: expected {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let count = read_u32(bytes, 4, "images.count")? as usize;
    let rows = read_u32(bytes, 8, "images.rows")? as usize;
    let cols = read_u32(bytes, 12, "images.cols")? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::format(
            "images.pixels",
            format!(
                "truncated at byte offset {}: header promises {need} bytes",
                bytes.len()
            ),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..need].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "labels.magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            "labels.magic",
            format!("byte offset 0: expected {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let count = read_u32(bytes, 4, "labels.count")? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(Error::format(
            "labels.values",
            format!(
                "truncated at byte offset {}: header promises {need} bytes",
                bytes.len()
            ),
        ));
    }
    Ok(bytes[8..need].to_vec())
}

/// Raw images scaled to `[0, 1]` and zero-padded by `pad` on every side,
/// as an `N × 1 × (rows+2·pad) × (cols+2·pad)` tensor.
pub fn to_padded_tensor(images: &IdxImages, pad: usize) -> Result<Tensor> {
    let (h, w) = (images.rows + 2 * pad, images.cols + 2 * pad);
    let mut data = vec![0.0f32; images.count * h * w];
    for (n, img) in images.pixels.chunks(images.rows * images.cols).enumerate() {
        let dst = &mut data[n * h * w..(n + 1) * h * w];
        for r in 0..images.rows {
            for c in 0..images.cols {
                dst[(r + pad) * w + c + pad] = img[r * images.cols + c] as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![images.count, 1, h, w], data)
}

/// Per-pixel mean and standard deviation over a training split.
///
/// Pixels that are constant over the split (e.g. the zero padding) get a
/// standard deviation of 1, so standardization maps them to 0 and the
/// perturbation formula stays defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelStats {
    pub shape: Vec<usize>,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl PixelStats {
    /// Statistics of an `N × ...` tensor over its first axis (population
    /// standard deviation, accumulated in `f64`).
    pub fn from_images(images: &Tensor) -> Self {
        let n = images.shape()[0];
        let per: usize = images.shape()[1..].iter().product();
        let mut sum = vec![0.0f64; per];
        for img in images.data().chunks(per) {
            for (s, &v) in sum.iter_mut().zip(img) {
                *s += v as f64;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0.0f64; per];
        for img in images.data().chunks(per) {
            for ((s, &v), m) in sq.iter_mut().zip(img).zip(&mean) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd as f32
                } else {
                    1.0
                }
            })
            .collect();
        PixelStats {
            shape: images.shape()[1..].to_vec(),
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    /// In-place `(x − μ) / σ` per pixel over a batch.
    pub fn standardize(&self, images: &mut Tensor) {
        let per = self.mean.len();
        for img in images.data_mut().chunks_mut(per) {
            for ((v, m), s) in img.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

/// A standardized MNIST split plus the statistics used to standardize it.
#[derive(Clone, Debug)]
pub struct MnistSplit {
    pub data: Dataset,
    pub stats: PixelStats,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an image/label IDX pair into padded `[0, 1]` pixels and labels,
/// without standardizing. `limit` keeps only the first samples.
pub fn load_idx_pair(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<(Tensor, Vec<usize>)> {
    let images = parse_idx_images(&read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    if images.count != labels.len() {
        return Err(Error::format(
            "count",
            format!(
                "{} images but {} labels",
                images.count,
                labels.len()
            ),
        ));
    }
    let keep = limit.unwrap_or(images.count).min(images.count);
    let images = IdxImages {
        count: keep,
        pixels: images.pixels[..keep * images.rows * images.cols].to_vec(),
        ..images
    };
    let tensor = to_padded_tensor(&images, MNIST_PAD)?;
    Ok((tensor, labels[..keep].iter().map(|&l| l as usize).collect()))
}

/// Loads and standardizes the training split, returning the statistics for
/// reuse on the test split.
pub fn load_mnist_train(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<MnistSplit> {
    let (mut images, labels) = load_idx_pair(images_path, labels_path, limit)?;
    let stats = PixelStats::from_images(&images);
    stats.standardize(&mut images);
    Ok(MnistSplit {
        data: Dataset::new(images, labels)?,
        stats,
    })
}

/// Loads a split and standardizes it with given (training) statistics.
pub fn load_mnist_with_stats(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    stats: &PixelStats,
    limit: Option<usize>,
) -> Result<Dataset> {
    let (mut images, labels) = load_idx_pair(images_path, labels_path, limit)?;
    if images.shape()[1..] != stats.shape[..] {
        return Err(Error::dim(format!(
            "statistics for {:?} applied to images {:?}",
            stats.shape,
            &images.shape()[1..]
        )));
    }
    stats.standardize(&mut images);
    Dataset::new(images, labels)
}

/// Serialized IDX files, used by tests and fixtures.
pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
