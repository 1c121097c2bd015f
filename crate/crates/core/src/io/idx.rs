//! IDX (MNIST) reader.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::RealGrid;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

pub const MNIST_TRAIN_LEN: usize = 60_000;
pub const MNIST_TEST_LEN: usize = 10_000;

/// A set of 8-bit digit images with labels; images are materialized lazily.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitSet {
    pub rows: usize,
    pub cols: usize,
    pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl DigitSet {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != rows * cols * labels.len() {
            return Err(Error::CountMismatch {
                expected: rows * cols * labels.len(),
                found: pixels.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
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

    pub fn raw(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Image `i` as a one-channel grid scaled to `[0, 1]`.
    pub fn image(&self, i: usize) -> RealGrid {
        let data = self.raw(i).iter().map(|&p| p as f64 / 255.0).collect();
        RealGrid::from_vec(self.rows, self.cols, 1, data).expect("sizes are consistent")
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// First `n` examples (or all, if fewer).
    pub fn truncated(&self, n: usize) -> DigitSet {
        let n = n.min(self.len());
        DigitSet {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * self.rows * self.cols].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn label_histogram(&self) -> [usize; 10] {
        let mut h = [0; 10];
        for &l in &self.labels {
            h[(l as usize).min(9)] += 1;
        }
        h
    }
}

#[derive(Debug, Clone)]
pub struct MnistSplits {
    pub train: DigitSet,
    pub test: DigitSet,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

pub fn decode_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let payload = &bytes[16..];
    let expected = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::CountMismatch {
            expected,
            found: payload.len(),
        });
    }
    Ok((n, rows, cols, payload.to_vec()))
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::CountMismatch {
            expected: n,
            found: payload.len(),
        });
    }
    if let Some(&bad) = payload.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label {bad} out of range 0..=9")));
    }
    Ok(payload.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_digit_set(images: &Path, labels: &Path) -> Result<DigitSet> {
    let (n, rows, cols, pixels) = decode_idx_images(&read(images)?)?;
    let labels = decode_idx_labels(&read(labels)?)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    DigitSet::new(rows, cols, pixels, labels)
}

/// Read the four standard MNIST files from `dir` and check the split sizes.
pub fn ingest_mnist(dir: impl AsRef<Path>) -> Result<MnistSplits> {
    let dir = dir.as_ref();
    let train = read_digit_set(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?;
    let test = read_digit_set(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?;
    for (set, expected) in [(&train, MNIST_TRAIN_LEN), (&test, MNIST_TEST_LEN)] {
        if set.len() != expected {
            return Err(Error::CountMismatch {
                expected,
                found: set.len(),
            });
        }
    }
    Ok(MnistSplits { train, test })
}
