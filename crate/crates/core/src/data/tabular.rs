use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::Dataset;

/// Reads a CSV with a header row; the last column is an integer class label
/// and the others are features. The class count is `max(label) + 1` unless
/// `classes` is given.
pub fn load_csv(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let width = reader.headers()?.len();
    if width < 2 {
        return Err(Error::InvalidConfig(format!(
            "{}: need at least one feature column and a label column",
            path.display()
        )));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |msg: String| Error::Format {
            what: "csv dataset",
            offset: record.position().map_or(0, |p| p.byte()),
            message: format!("row {}: {msg}", line + 1),
        };
        for field in record.iter().take(width - 1) {
            let v: f64 = field.parse().map_err(|_| bad(format!("bad number {field:?}")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite value {field:?}")));
            }
            data.push(v);
        }
        let label = &record[width - 1];
        labels.push(
            label
                .parse::<usize>()
                .map_err(|_| bad(format!("bad class label {label:?}")))?,
        );
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let inputs = Matrix::from_vec(labels.len(), width - 1, data)?;
    Dataset::from_labels(inputs, &labels, classes)
}

/// Zero-mean, unit-variance columns using statistics from `reference`.
/// Constant columns are only centered.
pub fn standardize(reference: &Matrix, target: &Matrix) -> Result<Matrix> {
    if reference.cols() != target.cols() {
        return Err(Error::mismatch("standardize", reference.shape(), target.shape()));
    }
    if reference.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let j = reference.rows() as f64;
    let means: Vec<f64> = reference.column_sums().iter().map(|s| s / j).collect();
    let mut vars = vec![0.0; reference.cols()];
    for r in 0..reference.rows() {
        for ((v, &x), &mu) in vars.iter_mut().zip(reference.row(r)).zip(&means) {
            *v += (x - mu) * (x - mu);
        }
    }
    let scales: Vec<f64> = vars
        .iter()
        .map(|v| {
            let sd = (v / j).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    let cols = target.cols();
    let data = target
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - means[i % cols]) * scales[i % cols])
        .collect();
    Matrix::from_vec(target.rows(), cols, data)
}
