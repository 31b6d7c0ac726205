use std::io::BufRead;
use std::path::Path;

use super::{open_maybe_gz, parse_label, LabelMap, LoadOptions, LoadedData};
use crate::error::{Error, Result};
use crate::model::{Dataset, DenseMatrix, FeatureMatrix};

/// Dense comma-separated data; the last column is the integer label.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool, opts: &LoadOptions) -> Result<LoadedData> {
    let reader = open_maybe_gz(path.as_ref())?;
    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    let mut line_numbers = Vec::new();
    let mut width: Option<usize> = opts.num_features;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if (has_header && lineno == 1) || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let (label, features) = fields.split_last().expect("split yields at least one field");
        match width {
            Some(w) if w != features.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {w} feature columns, found {}", features.len()),
                })
            }
            None => width = Some(features.len()),
            _ => {}
        }
        for f in features {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature value {f:?}"),
            })?;
            data.push(v);
        }
        raw_labels.push(parse_label(label, lineno)?);
        line_numbers.push(lineno);
    }

    if raw_labels.is_empty() {
        return Err(Error::input("CSV input contains no data rows"));
    }
    let label_map = opts
        .label_map
        .clone()
        .unwrap_or_else(|| LabelMap::from_labels(&raw_labels));
    let labels = label_map.encode(&raw_labels, |i| line_numbers[i])?;
    let cols = width.unwrap_or(0);
    let matrix = DenseMatrix::new(raw_labels.len(), cols, data)?;
    let dataset = Dataset::new(FeatureMatrix::Dense(matrix), labels, label_map.num_classes())?;
    Ok(LoadedData { dataset, label_map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn last_column_is_label() {
        let f = write("a,b,label\n1.5,2,0\n-1,0,1\n3,3,0\n");
        let loaded = load_csv(f.path(), true, &LoadOptions::default()).unwrap();
        let d = loaded.dataset;
        assert_eq!((d.n(), d.p(), d.num_classes()), (3, 2, 2));
        assert_eq!(d.labels(), &[1, 2, 1]);
        assert_eq!(d.row(1).to_dense(2), vec![-1.0, 0.0]);
    }

    #[test]
    fn ragged_rows_rejected() {
        let f = write("1,2,0\n1,1\n");
        assert!(matches!(
            load_csv(f.path(), false, &LoadOptions::default()),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
