use std::io::{BufRead, Write};
use std::path::Path;

use super::{open_maybe_gz, parse_label, LabelMap, LoadOptions, LoadedData};
use crate::error::{Error, Result};
use crate::model::{CsrMatrix, Dataset, FeatureMatrix};

/// Loads a LIBSVM / SVMlight text file (`label idx:value ...`, 1-based
/// feature indices) into CSR storage.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<LoadedData> {
    load_libsvm_with(path, &LoadOptions::default())
}

pub fn load_libsvm_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LoadedData> {
    parse_libsvm(open_maybe_gz(path.as_ref())?, opts)
}

pub fn parse_libsvm<R: BufRead>(reader: R, opts: &LoadOptions) -> Result<LoadedData> {
    let mut raw_labels = Vec::new();
    let mut line_numbers = Vec::new();
    let mut indptr = vec![0usize];
    let mut indices: Vec<u32> = Vec::new();
    let mut values = Vec::new();
    let mut max_index = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = parse_label(tokens.next().unwrap_or_default(), lineno)?;
        let start = indices.len();
        for token in tokens {
            let (idx, val) = token.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("expected index:value, found {token:?}"),
            })?;
            if idx == "qid" {
                continue;
            }
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature index {idx:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "feature indices are 1-based; found 0".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature value {val:?}"),
            })?;
            if !val.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("non-finite feature value {val}"),
                });
            }
            if let Some(limit) = opts.num_features {
                if idx > limit {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("feature index {idx} exceeds expected width {limit}"),
                    });
                }
            }
            max_index = max_index.max(idx);
            indices.push((idx - 1) as u32);
            values.push(val);
        }
        sort_row(&mut indices[start..], &mut values[start..], lineno)?;
        indptr.push(indices.len());
        raw_labels.push(label);
        line_numbers.push(lineno);
    }

    if raw_labels.is_empty() {
        return Err(Error::input("LIBSVM input contains no data rows"));
    }
    let label_map = opts
        .label_map
        .clone()
        .unwrap_or_else(|| LabelMap::from_labels(&raw_labels));
    let labels = label_map.encode(&raw_labels, |i| line_numbers[i])?;
    let cols = opts.num_features.unwrap_or(max_index).max(1);
    let n = raw_labels.len();
    let features = FeatureMatrix::Sparse(CsrMatrix::new(n, cols, indptr, indices, values)?);
    let dataset = Dataset::new(features, labels, label_map.num_classes())?;
    Ok(LoadedData { dataset, label_map })
}

fn sort_row(indices: &mut [u32], values: &mut [f64], line: usize) -> Result<()> {
    if indices.windows(2).all(|w| w[0] < w[1]) {
        return Ok(());
    }
    let mut pairs: Vec<(u32, f64)> = indices.iter().copied().zip(values.iter().copied()).collect();
    pairs.sort_by_key(|&(j, _)| j);
    if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Parse {
            line,
            message: "duplicate feature index".into(),
        });
    }
    for (k, (j, v)) in pairs.into_iter().enumerate() {
        indices[k] = j;
        values[k] = v;
    }
    Ok(())
}

/// Writes `data` in LIBSVM format, emitting nonzero entries only. Values use
/// the shortest representation that parses back to the same `f64`.
pub fn write_libsvm<W: Write>(data: &Dataset, labels: &LabelMap, mut out: W) -> Result<()> {
    let sparse = data.to_sparse();
    for i in 0..sparse.n() {
        let class = sparse.labels()[i];
        let label = labels
            .label_of(class)
            .ok_or_else(|| Error::input(format!("class {class} missing from label map")))?;
        write!(out, "{label}")?;
        if let crate::model::Row::Sparse { indices, values } = sparse.row(i) {
            for (j, v) in indices.iter().zip(values) {
                write!(out, " {}:{v}", j + 1)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
