//! PCA compression of meaning vectors.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PcaError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("component count {d} out of range 1..={max}")]
    BadComponentCount { d: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Fitted principal axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d` rows of length `D`, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Variance of the data along each component, nonincreasing.
    pub explained_variance: Vec<f64>,
}

/// Fit the top-`d` principal axes of `data` (rows are observations).
///
/// Variance is normalised by N, so `explained_variance[j]` is exactly the
/// variance of the projected training data along axis `j`. Each axis is
/// signed so that its largest-magnitude entry is positive.
pub fn pca_fit(data: &[Vec<f64>], d: usize) -> Result<PcaModel, PcaError> {
    let n = data.len();
    if n < 2 {
        return Err(PcaError::TooFewRows(n));
    }
    let dim = data[0].len();
    if let Some(row) = data.iter().find(|r| r.len() != dim) {
        return Err(PcaError::DimensionMismatch { expected: dim, found: row.len() });
    }
    let max = n.min(dim);
    if d == 0 || d > max {
        return Err(PcaError::BadComponentCount { d, max });
    }

    let mut mean = vec![0.0; dim];
    for row in data {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for row in data {
        for ((c, x), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = x - m;
        }
        for a in 0..dim {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..dim {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = cov[(a, b)] / n as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));

    let mut components = Vec::with_capacity(d);
    let mut explained_variance = Vec::with_capacity(d);
    for &j in order.iter().take(d) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let norm = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
        axis.iter_mut().for_each(|x| *x /= norm);
        let pivot = axis
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > axis[best].abs() { i } else { best });
        if axis[pivot] < 0.0 {
            axis.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(axis);
        explained_variance.push(eig.eigenvalues[j].max(0.0));
    }
    Ok(PcaModel { mean, components, explained_variance })
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    /// `components · (v − mean)`.
    pub fn transform(&self, v: &[f64]) -> Result<Vec<f64>, PcaError> {
        if v.len() != self.mean.len() {
            return Err(PcaError::DimensionMismatch { expected: self.mean.len(), found: v.len() });
        }
        Ok(self
            .components
            .iter()
            .map(|axis| axis.iter().zip(v).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect())
    }

    /// `mean + componentsᵀ · y`.
    pub fn inverse_transform(&self, y: &[f64]) -> Result<Vec<f64>, PcaError> {
        if y.len() != self.components.len() {
            return Err(PcaError::DimensionMismatch { expected: self.components.len(), found: y.len() });
        }
        let mut out = self.mean.clone();
        for (axis, &coef) in self.components.iter().zip(y) {
            for (o, a) in out.iter_mut().zip(axis) {
                *o += coef * a;
            }
        }
        Ok(out)
    }

    /// The leading `d` axes; identical to fitting with `d` directly.
    pub fn truncate(&self, d: usize) -> Result<PcaModel, PcaError> {
        if d == 0 || d > self.output_dim() {
            return Err(PcaError::BadComponentCount { d, max: self.output_dim() });
        }
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: self.components[..d].to_vec(),
            explained_variance: self.explained_variance[..d].to_vec(),
        })
    }

    /// Fraction of total variance captured, given the total variance of the data.
    pub fn total_explained(&self) -> f64 {
        self.explained_variance.iter().sum()
    }
}
