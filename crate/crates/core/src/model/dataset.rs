use std::ops::{Deref, DerefMut};

use crate::error::{check_dim, Error, Result};

/// Row-major dense feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("dense matrix storage", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_dim("dense row length", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Compressed-sparse-row feature matrix with 0-based, strictly increasing
/// column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_dim("csr indptr", rows + 1, indptr.len())?;
        check_dim("csr values", indices.len(), values.len())?;
        if indptr[0] != 0 || indptr[rows] != indices.len() {
            return Err(Error::input("csr indptr does not span the index array"));
        }
        for i in 0..rows {
            let (lo, hi) = (indptr[i], indptr[i + 1]);
            if lo > hi {
                return Err(Error::input(format!("csr indptr decreases at row {i}")));
            }
            let row = &indices[lo..hi];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::input(format!(
                    "csr column indices not strictly increasing in row {i}"
                )));
            }
            if row.last().is_some_and(|&c| c as usize >= cols) {
                return Err(Error::input(format!("csr column index out of range in row {i}")));
            }
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &self.values[lo..hi])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMatrix {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

/// Borrowed view of one observation.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a> {
    Dense(&'a [f64]),
    Sparse {
        indices: &'a [u32],
        values: &'a [f64],
    },
}

impl Row<'_> {
    /// Inner product with a length-`p` slice.
    #[inline]
    pub fn dot(&self, x: &[f64]) -> f64 {
        match *self {
            Row::Dense(a) => a.iter().zip(x).map(|(u, v)| u * v).sum(),
            Row::Sparse { indices, values } => indices
                .iter()
                .zip(values)
                .map(|(&j, v)| v * x[j as usize])
                .sum(),
        }
    }

    /// `out += alpha * row`
    #[inline]
    pub fn axpy(&self, alpha: f64, out: &mut [f64]) {
        match *self {
            Row::Dense(a) => {
                for (o, v) in out.iter_mut().zip(a) {
                    *o += alpha * v;
                }
            }
            Row::Sparse { indices, values } => {
                for (&j, v) in indices.iter().zip(values) {
                    out[j as usize] += alpha * v;
                }
            }
        }
    }

    pub fn to_dense(&self, p: usize) -> Vec<f64> {
        match *self {
            Row::Dense(a) => a.to_vec(),
            Row::Sparse { indices, values } => {
                let mut out = vec![0.0; p];
                for (&j, &v) in indices.iter().zip(values) {
                    out[j as usize] = v;
                }
                out
            }
        }
    }
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        match self {
            FeatureMatrix::Dense(m) => m.rows(),
            FeatureMatrix::Sparse(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            FeatureMatrix::Dense(m) => m.cols(),
            FeatureMatrix::Sparse(m) => m.cols(),
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> Row<'_> {
        match self {
            FeatureMatrix::Dense(m) => Row::Dense(m.row(i)),
            FeatureMatrix::Sparse(m) => {
                let (indices, values) = m.row(i);
                Row::Sparse { indices, values }
            }
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            FeatureMatrix::Dense(m) => &m.data,
            FeatureMatrix::Sparse(m) => &m.values,
        }
    }
}

/// Labelled training data. Labels are 1-based class ids in `1..=num_classes`;
/// class `num_classes` is the reference class whose weight block is pinned
/// to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: FeatureMatrix,
    labels: Vec<u32>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: FeatureMatrix, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::input("dataset has no rows"));
        }
        if features.cols() == 0 {
            return Err(Error::input("dataset has no feature columns"));
        }
        if num_classes < 2 {
            return Err(Error::input(format!(
                "need at least two classes, got {num_classes}"
            )));
        }
        check_dim("label count", n, labels.len())?;
        if let Some((i, &b)) = labels
            .iter()
            .enumerate()
            .find(|(_, &b)| b == 0 || b as usize > num_classes)
        {
            return Err(Error::input(format!(
                "label {b} at row {i} outside 1..={num_classes}"
            )));
        }
        if features.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::input("features contain NaN or infinite values"));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn dense(rows: &[Vec<f64>], labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        Self::new(
            FeatureMatrix::Dense(DenseMatrix::from_rows(rows)?),
            labels,
            num_classes,
        )
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn p(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Length of the flat weight vector, `(C - 1) * p`.
    pub fn dim(&self) -> usize {
        (self.num_classes - 1) * self.p()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    #[inline]
    pub fn row(&self, i: usize) -> Row<'_> {
        self.features.row(i)
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.features, FeatureMatrix::Sparse(_))
    }

    /// Copies the given rows, in order, into a new dataset with the same
    /// feature width and class count.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(Error::input(format!("row {bad} out of range for n={}", self.n())));
        }
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        let features = match &self.features {
            FeatureMatrix::Dense(m) => {
                let mut data = Vec::with_capacity(rows.len() * m.cols);
                for &r in rows {
                    data.extend_from_slice(m.row(r));
                }
                FeatureMatrix::Dense(DenseMatrix::new(rows.len(), m.cols, data)?)
            }
            FeatureMatrix::Sparse(m) => {
                let mut indptr = Vec::with_capacity(rows.len() + 1);
                let mut indices = Vec::new();
                let mut values = Vec::new();
                indptr.push(0);
                for &r in rows {
                    let (idx, val) = m.row(r);
                    indices.extend_from_slice(idx);
                    values.extend_from_slice(val);
                    indptr.push(indices.len());
                }
                FeatureMatrix::Sparse(CsrMatrix::new(rows.len(), m.cols, indptr, indices, values)?)
            }
        };
        Self::new(features, labels, self.num_classes)
    }

    pub fn to_dense(&self) -> Self {
        match &self.features {
            FeatureMatrix::Dense(_) => self.clone(),
            FeatureMatrix::Sparse(m) => {
                let mut data = Vec::with_capacity(m.rows * m.cols);
                for i in 0..m.rows {
                    data.extend(self.row(i).to_dense(m.cols));
                }
                Self {
                    features: FeatureMatrix::Dense(DenseMatrix {
                        rows: m.rows,
                        cols: m.cols,
                        data,
                    }),
                    labels: self.labels.clone(),
                    num_classes: self.num_classes,
                }
            }
        }
    }

    /// CSR copy keeping only the nonzero entries.
    pub fn to_sparse(&self) -> Self {
        match &self.features {
            FeatureMatrix::Sparse(_) => self.clone(),
            FeatureMatrix::Dense(m) => {
                let mut indptr = Vec::with_capacity(m.rows + 1);
                let mut indices = Vec::new();
                let mut values = Vec::new();
                indptr.push(0);
                for i in 0..m.rows {
                    for (j, &v) in m.row(i).iter().enumerate() {
                        if v != 0.0 {
                            indices.push(j as u32);
                            values.push(v);
                        }
                    }
                    indptr.push(indices.len());
                }
                Self {
                    features: FeatureMatrix::Sparse(CsrMatrix {
                        rows: m.rows,
                        cols: m.cols,
                        indptr,
                        indices,
                        values,
                    }),
                    labels: self.labels.clone(),
                    num_classes: self.num_classes,
                }
            }
        }
    }

    /// Multiplies every feature column `j` by `scales[j]`.
    pub fn scale_columns(&mut self, scales: &[f64]) -> Result<()> {
        check_dim("column scales", self.p(), scales.len())?;
        match &mut self.features {
            FeatureMatrix::Dense(m) => {
                for row in m.data.chunks_mut(m.cols) {
                    for (v, s) in row.iter_mut().zip(scales) {
                        *v *= s;
                    }
                }
            }
            FeatureMatrix::Sparse(m) => {
                for (v, &j) in m.values.iter_mut().zip(&m.indices) {
                    *v *= scales[j as usize];
                }
            }
        }
        Ok(())
    }
}

/// Flat parameter vector of length `(C - 1) * p`, viewed as `C - 1`
/// consecutive blocks of length `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    values: Vec<f64>,
    block_len: usize,
}

impl Weights {
    pub fn zeros(num_features: usize, num_classes: usize) -> Self {
        Self {
            values: vec![0.0; num_features * num_classes.saturating_sub(1)],
            block_len: num_features,
        }
    }

    pub fn from_vec(values: Vec<f64>, num_features: usize) -> Result<Self> {
        if num_features == 0 || values.len() % num_features != 0 {
            return Err(Error::Dimension {
                what: "weight vector (must be a multiple of p)",
                expected: num_features,
                found: values.len(),
            });
        }
        Ok(Self {
            values,
            block_len: num_features,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.values.len() / self.block_len
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// Weight block for class `c` (0-based, `c < C - 1`).
    pub fn block(&self, c: usize) -> &[f64] {
        &self.values[c * self.block_len..(c + 1) * self.block_len]
    }

    pub fn block_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c * self.block_len..(c + 1) * self.block_len]
    }

    pub fn blocks(&self) -> std::slice::Chunks<'_, f64> {
        self.values.chunks(self.block_len)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl Deref for Weights {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for Weights {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}
