//! MNIST IDX parsing.
//!
//! Images are stored row-major, one 784-pixel row per sample, scaled from raw
//! bytes to `[0, 1]` by dividing by 255. Pixel `(x, y)` is column `x`, row `y`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images plus labels tagged with the split they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitSet<T> {
    images: Vec<T>,
    labels: Vec<u8>,
    split: Split,
}

impl<T: Real> DigitSet<T> {
    pub fn new(images: Vec<T>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if !images.len().is_multiple_of(PIXELS) {
            return Err(Error::Dimension(format!(
                "image buffer of {} values is not a multiple of {PIXELS}",
                images.len()
            )));
        }
        if images.len() / PIXELS != labels.len() {
            return Err(Error::Dimension(format!(
                "{} images but {} labels",
                images.len() / PIXELS,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Format(format!("label {bad} outside 0..9")));
        }
        if images.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
            return Err(Error::Format("pixel value outside [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            split,
        })
    }

    /// Loads `{train,t10k}-{images,labels}` from `dir`.
    pub fn load(dir: impl AsRef<Path>, split: Split) -> Result<Self> {
        let dir = dir.as_ref();
        let (img, lab) = match split {
            Split::Train => (TRAIN_IMAGES, TRAIN_LABELS),
            Split::Test => (TEST_IMAGES, TEST_LABELS),
        };
        let images = load_idx_images(dir.join(img))?;
        let labels = load_idx_labels(dir.join(lab))?;
        Self::new(images, labels, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image(&self, i: usize) -> &[T] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn images(&self) -> &[T] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n * PIXELS].to_vec(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }

    /// Fails unless the set carries the expected split tag.
    pub fn require(&self, split: Split) -> Result<()> {
        if self.split == split {
            Ok(())
        } else {
            Err(Error::Split(format!(
                "expected {split:?} digits, got {:?}",
                self.split
            )))
        }
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Parses an IDX3 image file into a `count * 784` buffer scaled to `[0, 1]`.
pub fn parse_idx_images<T: Real>(bytes: &[u8]) -> Result<Vec<T>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if rows != SIDE || cols != SIDE {
        return Err(Error::Format(format!("expected 28x28 images, got {rows}x{cols}")));
    }
    let payload = &bytes[16..];
    let expected = count * PIXELS;
    if payload.len() != expected {
        return Err(Error::Length {
            expected,
            found: payload.len(),
        });
    }
    Ok(payload.iter().map(|&b| T::of(b as f64 / 255.0)).collect())
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Length {
            expected: count,
            found: payload.len(),
        });
    }
    if let Some(bad) = payload.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label byte {bad} outside 0..9")));
    }
    Ok(payload.to_vec())
}

pub fn load_idx_images<T: Real>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_labels(&bytes)
}

/// Serializes images back to IDX3 bytes; pixels are rounded to the nearest byte.
pub fn encode_idx_images<T: Real>(images: &[T]) -> Vec<u8> {
    let count = images.len() / PIXELS;
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IMAGE_MAGIC, count as u32, SIDE as u32, SIDE as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.iter().map(|&p| {
        (p.to_f() * 255.0).round().clamp(0.0, 255.0) as u8
    }));
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
