//! Dataset ingestion, partitioning across workers and synthetic data.

mod csv;
mod idx;
mod libsvm;
mod partition;
mod synthetic;

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

pub use self::csv::load_csv;
pub use idx::load_idx;
pub use libsvm::{load_libsvm, load_libsvm_with, parse_libsvm, write_libsvm};
pub use partition::{partition, PartitionPlan, PartitionScheme};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Maps internal class ids `1..=C` back to the labels found in the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    /// `original[c - 1]` is the file label of class `c`.
    pub original: Vec<i64>,
}

impl LabelMap {
    /// Sorted distinct labels become classes `1..=C`.
    pub fn from_labels(labels: &[i64]) -> Self {
        let mut original = labels.to_vec();
        original.sort_unstable();
        original.dedup();
        Self { original }
    }

    pub fn num_classes(&self) -> usize {
        self.original.len()
    }

    pub fn class_of(&self, label: i64) -> Option<u32> {
        self.original
            .binary_search(&label)
            .ok()
            .map(|i| i as u32 + 1)
    }

    pub fn label_of(&self, class: u32) -> Option<i64> {
        self.original.get((class as usize).checked_sub(1)?).copied()
    }

    pub(crate) fn encode(&self, labels: &[i64], line_of: impl Fn(usize) -> usize) -> Result<Vec<u32>> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                self.class_of(l).ok_or_else(|| Error::Parse {
                    line: line_of(i),
                    message: format!("label {l} not present in the label map"),
                })
            })
            .collect()
    }
}

/// A dataset together with the label mapping used to build it.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub label_map: LabelMap,
}

/// Constraints used when loading a test file against an existing training
/// set: the feature width and the label map must agree.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub num_features: Option<usize>,
    pub label_map: Option<LabelMap>,
}

/// Opens a file for buffered reading, decompressing gzip transparently.
pub(crate) fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let is_gz = reader.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    if is_gz {
        Ok(Box::new(BufReader::new(GzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

pub(crate) fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    open_maybe_gz(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// Integer label, also accepting integral floats such as `1.0`.
pub(crate) fn parse_label(token: &str, line: usize) -> Result<i64> {
    if let Ok(v) = token.parse::<i64>() {
        return Ok(v);
    }
    match token.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 9e15 => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            message: format!("label {token:?} is not an integer"),
        }),
    }
}

/// Per-column max-abs scale factors; all-zero columns keep scale 1.
pub fn max_abs_scales(data: &Dataset) -> Vec<f64> {
    let mut max = vec![0.0_f64; data.p()];
    for i in 0..data.n() {
        match data.row(i) {
            crate::model::Row::Dense(a) => {
                for (m, v) in max.iter_mut().zip(a) {
                    *m = m.max(v.abs());
                }
            }
            crate::model::Row::Sparse { indices, values } => {
                for (&j, v) in indices.iter().zip(values) {
                    let m = &mut max[j as usize];
                    *m = m.max(v.abs());
                }
            }
        }
    }
    max.into_iter()
        .map(|m| if m > 0.0 { 1.0 / m } else { 1.0 })
        .collect()
}

/// Scales every column of `train` into `[-1, 1]` and applies the same
/// factors to `test`.
pub fn normalize(train: &mut Dataset, test: Option<&mut Dataset>) -> Result<Vec<f64>> {
    let scales = max_abs_scales(train);
    train.scale_columns(&scales)?;
    if let Some(test) = test {
        test.scale_columns(&scales)?;
    }
    Ok(scales)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_map_sorts_and_inverts() {
        let map = LabelMap::from_labels(&[1, -1, 1, -1]);
        assert_eq!(map.original, vec![-1, 1]);
        assert_eq!(map.class_of(-1), Some(1));
        assert_eq!(map.class_of(1), Some(2));
        assert_eq!(map.label_of(2), Some(1));
        assert_eq!(map.class_of(7), None);
        assert_eq!(map.label_of(0), None);
    }

    #[test]
    fn label_parsing() {
        assert_eq!(parse_label("+1", 1).unwrap(), 1);
        assert_eq!(parse_label("3.0", 1).unwrap(), 3);
        assert!(matches!(parse_label("1.5", 4), Err(Error::Parse { line: 4, .. })));
        assert!(parse_label("cat", 1).is_err());
    }

    #[test]
    fn normalization_bounds_columns() {
        let mut train =
            Dataset::dense(&[vec![2.0, 0.0, -4.0], vec![-1.0, 0.0, 1.0]], vec![1, 2], 2).unwrap();
        let mut test = Dataset::dense(&[vec![4.0, 1.0, 2.0]], vec![1], 2).unwrap();
        let scales = normalize(&mut train, Some(&mut test)).unwrap();
        assert_eq!(scales, vec![0.5, 1.0, 0.25]);
        assert_eq!(train.row(0).to_dense(3), vec![1.0, 0.0, -1.0]);
        assert_eq!(test.row(0).to_dense(3), vec![2.0, 1.0, 0.5]);
    }
}
