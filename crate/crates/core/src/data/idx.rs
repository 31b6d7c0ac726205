use std::path::Path;

use super::read_all;
use crate::error::{Error, Result};
use crate::model::{Dataset, DenseMatrix, FeatureMatrix};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| {
            Error::input(format!(
                "{file} truncated: expected at least {} header bytes, found {}",
                offset + 4,
                bytes.len()
            ))
        })
}

fn check_magic(found: u32, expected: u32, file: &str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::input(format!(
            "{file}: bad IDX magic {found:#010x}, expected {expected:#010x}"
        )))
    }
}

fn check_len(bytes: &[u8], expected: usize, file: &str) -> Result<()> {
    if bytes.len() < expected {
        Err(Error::input(format!(
            "{file} truncated: expected {expected} bytes, found {}",
            bytes.len()
        )))
    } else {
        Ok(())
    }
}

/// Reads an IDX image/label pair (the MNIST distribution format, optionally
/// gzipped). Pixels are scaled to `[0, 1]`; digit labels `0..=9` become
/// classes `1..=10`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_all(images_path.as_ref())?;
    let labels = read_all(labels_path.as_ref())?;
    parse_idx(&images, &labels)
}

pub(crate) fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    check_magic(be_u32(images, 0, "images file")?, IMAGES_MAGIC, "images file")?;
    check_magic(be_u32(labels, 0, "labels file")?, LABELS_MAGIC, "labels file")?;
    let n = be_u32(images, 4, "images file")? as usize;
    let rows = be_u32(images, 8, "images file")? as usize;
    let cols = be_u32(images, 12, "images file")? as usize;
    let n_labels = be_u32(labels, 4, "labels file")? as usize;
    if n != n_labels {
        return Err(Error::input(format!(
            "images file holds {n} items but labels file holds {n_labels}"
        )));
    }
    let p = rows * cols;
    check_len(images, 16 + n * p, "images file")?;
    check_len(labels, 8 + n, "labels file")?;

    let pixels: Vec<f64> = images[16..16 + n * p]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let digits = &labels[8..8 + n];
    let num_classes = digits.iter().copied().max().map_or(2, |m| m as usize + 1).max(2);
    let classes = digits.iter().map(|&l| u32::from(l) + 1).collect();
    Dataset::new(
        FeatureMatrix::Dense(DenseMatrix::new(n, p, pixels)?),
        classes,
        num_classes,
    )
}
