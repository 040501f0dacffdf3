use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PcaError {
    #[error("requested {k} components but the data has rank {rank}")]
    Rank { k: usize, rank: usize },
    #[error("eigendecomposition produced non-finite values")]
    Numerical,
    #[error("no samples")]
    Empty,
    #[error("sample {index} has length {len}, expected {dim}")]
    Dimension { index: usize, len: usize, dim: usize },
}

/// Mean and the top-k principal axes of a sample.
///
/// Rows of `components` are orthonormal and ordered by explained variance;
/// each row's largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    /// Unbiased (n - 1) variance along each component.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|row| row.iter().zip(x).zip(&self.mean).map(|((w, xi), m)| w * (xi - m)).sum())
            .collect()
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (row, zi) in self.components.iter().zip(z) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * zi;
            }
        }
        out
    }
}

fn covariance(samples: &[Vec<f64>]) -> Result<(Vec<f64>, DMatrix<f64>), PcaError> {
    let n = samples.len();
    if n == 0 {
        return Err(PcaError::Empty);
    }
    let dim = samples[0].len();
    for (index, s) in samples.iter().enumerate() {
        if s.len() != dim {
            return Err(PcaError::Dimension { index, len: s.len(), dim });
        }
    }
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| samples[i][j] - mean[j]);
    let denom = (n.max(2) - 1) as f64;
    let cov = (centered.transpose() * &centered) / denom;
    Ok((mean, cov))
}

/// Eigen-decomposition of the sample covariance: returns every axis with a
/// non-negligible variance, largest first.
fn principal_axes(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<(f64, Vec<f64>)>), PcaError> {
    let (mean, cov) = covariance(samples)?;
    if samples.len() < 2 {
        return Ok((mean, Vec::new()));
    }
    // Coordinates that never vary contribute zero rows and columns; leaving
    // them out keeps the eigensolver away from exactly-zero off-diagonals.
    let active: Vec<usize> = (0..cov.nrows()).filter(|&i| cov[(i, i)] > 0.0).collect();
    if active.is_empty() {
        return Ok((mean, Vec::new()));
    }
    let sub = DMatrix::from_fn(active.len(), active.len(), |i, j| cov[(active[i], active[j])]);
    let eig = SymmetricEigen::new(sub);
    if eig.eigenvalues.iter().chain(eig.eigenvectors.iter()).any(|v| !v.is_finite()) {
        return Err(PcaError::Numerical);
    }
    let dim = cov.nrows();
    let mut axes: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &val)| {
            let mut v = vec![0.0; dim];
            for (r, &coord) in active.iter().enumerate() {
                v[coord] = eig.eigenvectors[(r, i)];
            }
            (val, v)
        })
        .collect();
    axes.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = axes.first().map_or(0.0, |a| a.0);
    let tol = top.max(f64::MIN_POSITIVE) * 1e-10;
    axes.retain(|(val, _)| *val > tol && *val > 1e-14);
    for (_, v) in &mut axes {
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() + 1e-12 { x } else { best });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok((mean, axes))
}

pub fn fit_pca(samples: &[Vec<f64>], k: usize) -> Result<PcaModel, PcaError> {
    let (mean, axes) = principal_axes(samples)?;
    if k > axes.len() {
        return Err(PcaError::Rank { k, rank: axes.len() });
    }
    Ok(build(mean, axes, k))
}

/// Like [`fit_pca`] but keeps `min(k, rank)` components; the second value is
/// the rank when clamping happened. Constant data yields a zero-component
/// model that projects everything to the empty vector.
pub fn fit_pca_clamped(samples: &[Vec<f64>], k: usize) -> Result<(PcaModel, Option<usize>), PcaError> {
    let (mean, axes) = principal_axes(samples)?;
    let rank = axes.len();
    let clamped = (k > rank).then_some(rank);
    Ok((build(mean, axes, k.min(rank)), clamped))
}

fn build(mean: Vec<f64>, axes: Vec<(f64, Vec<f64>)>, k: usize) -> PcaModel {
    let (explained_variance, components) = axes.into_iter().take(k).unzip();
    PcaModel {
        mean,
        components,
        explained_variance,
    }
}
