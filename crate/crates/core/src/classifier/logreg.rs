//! Multinomial logistic regression with per-class sample weights and an L2
//! penalty on the weights (biases unpenalized), fitted by damped Newton steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LogRegError {
    #[error("no training samples")]
    Empty,
    #[error("sample {index} has length {len}, expected {dim}")]
    Dimension { index: usize, len: usize, dim: usize },
    #[error("label {label} at sample {index} is out of range for {classes} classes")]
    Label { index: usize, label: usize, classes: usize },
    #[error("class {0} has no training samples")]
    MissingClass(usize),
    #[error("regularization strength C must be positive and finite")]
    BadC,
    #[error("class weight vector has {got} entries for {classes} classes")]
    Weights { got: usize, classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassWeighting {
    /// `w_c = N / (K * N_c)`.
    Balanced,
    Uniform,
    Custom(Vec<f64>),
}

pub fn balanced_weights(counts: &[usize]) -> Vec<f64> {
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n as f64 / (k * c as f64) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    /// One row per class.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl LogRegModel {
    pub fn n_classes(&self) -> usize {
        self.biases.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Penalized weighted cross-entropy over a fixed sample.
///
/// `L(θ) = (1/N) Σ s_n · CE(x_n, y_n; θ) + (1 / 2C) ‖W‖²`, where `s_n` is the
/// class weight of sample n. Parameters are laid out class-major: class c
/// occupies `θ[c*(D+1) .. (c+1)*(D+1)]` with its bias last.
pub struct Objective<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    sample_weights: Vec<f64>,
    n_classes: usize,
    dim: usize,
    c: f64,
}

impl<'a> Objective<'a> {
    pub fn new(
        x: &'a [Vec<f64>],
        y: &'a [usize],
        n_classes: usize,
        c: f64,
        weighting: &ClassWeighting,
    ) -> Result<Self, LogRegError> {
        if x.is_empty() {
            return Err(LogRegError::Empty);
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(LogRegError::BadC);
        }
        let dim = x[0].len();
        for (index, row) in x.iter().enumerate() {
            if row.len() != dim {
                return Err(LogRegError::Dimension { index, len: row.len(), dim });
            }
        }
        let mut counts = vec![0usize; n_classes];
        for (index, &label) in y.iter().enumerate() {
            if label >= n_classes {
                return Err(LogRegError::Label { index, label, classes: n_classes });
            }
            counts[label] += 1;
        }
        let class_weights = match weighting {
            ClassWeighting::Balanced => balanced_weights(&counts),
            ClassWeighting::Uniform => vec![1.0; n_classes],
            ClassWeighting::Custom(w) if w.len() == n_classes => w.clone(),
            ClassWeighting::Custom(w) => {
                return Err(LogRegError::Weights { got: w.len(), classes: n_classes })
            }
        };
        Ok(Self {
            x,
            y,
            sample_weights: y.iter().map(|&l| class_weights[l]).collect(),
            n_classes,
            dim,
            c,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_classes * (self.dim + 1)
    }

    fn logits(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let d1 = self.dim + 1;
        (0..self.n_classes)
            .map(|c| {
                let w = &theta[c * d1..(c + 1) * d1];
                w[self.dim] + w[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        let d1 = self.dim + 1;
        let sq: f64 = (0..self.n_classes)
            .map(|c| theta[c * d1..c * d1 + self.dim].iter().map(|w| w * w).sum::<f64>())
            .sum();
        sq / (2.0 * self.c)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let n = self.x.len() as f64;
        let data: f64 = self
            .x
            .iter()
            .zip(self.y)
            .zip(&self.sample_weights)
            .map(|((x, &y), s)| {
                let z = self.logits(theta, x);
                s * (log_sum_exp(&z) - z[y])
            })
            .sum();
        data / n + self.penalty(theta)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let d1 = self.dim + 1;
        let n = self.x.len() as f64;
        let mut g = vec![0.0; self.n_params()];
        for ((x, &y), s) in self.x.iter().zip(self.y).zip(&self.sample_weights) {
            let p = softmax(&self.logits(theta, x));
            for c in 0..self.n_classes {
                let r = s * (p[c] - f64::from(u8::from(c == y))) / n;
                let block = &mut g[c * d1..(c + 1) * d1];
                for (gi, xi) in block[..self.dim].iter_mut().zip(x) {
                    *gi += r * xi;
                }
                block[self.dim] += r;
            }
        }
        for c in 0..self.n_classes {
            for a in 0..self.dim {
                g[c * d1 + a] += theta[c * d1 + a] / self.c;
            }
        }
        g
    }

    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let (n, d, k) = (self.x.len(), self.dim, self.n_classes);
        let d1 = d + 1;
        let phi = DMatrix::from_fn(n, d1, |i, j| if j < d { self.x[i][j] } else { 1.0 });
        let probs: Vec<Vec<f64>> = self.x.iter().map(|x| softmax(&self.logits(theta, x))).collect();
        let mut h = DMatrix::zeros(k * d1, k * d1);
        for c in 0..k {
            for c2 in c..k {
                let mut scaled = phi.clone();
                for i in 0..n {
                    let delta = f64::from(u8::from(c == c2));
                    let v = self.sample_weights[i] * probs[i][c] * (delta - probs[i][c2]) / n as f64;
                    scaled.row_mut(i).scale_mut(v);
                }
                let block = phi.transpose() * scaled;
                h.view_mut((c * d1, c2 * d1), (d1, d1)).copy_from(&block);
                if c != c2 {
                    h.view_mut((c2 * d1, c * d1), (d1, d1)).copy_from(&block.transpose());
                }
            }
        }
        for c in 0..k {
            for a in 0..d {
                h[(c * d1 + a, c * d1 + a)] += 1.0 / self.c;
            }
        }
        h
    }

    fn to_model(&self, theta: &[f64]) -> LogRegModel {
        let d1 = self.dim + 1;
        LogRegModel {
            weights: (0..self.n_classes)
                .map(|c| theta[c * d1..c * d1 + self.dim].to_vec())
                .collect(),
            biases: (0..self.n_classes).map(|c| theta[c * d1 + self.dim]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence when the largest absolute gradient entry drops below this.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub converged: bool,
    pub gradient_max_abs: f64,
    pub objective: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn newton_direction(h: DMatrix<f64>, g: &[f64]) -> Option<DVector<f64>> {
    let rhs = DVector::from_iterator(g.len(), g.iter().map(|x| -x));
    // the softmax parametrization leaves the common bias shift unidentified,
    // so a small ridge keeps the factorization well defined
    let mut jitter = 1e-10;
    for _ in 0..8 {
        let mut m = h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            return Some(chol.solve(&rhs));
        }
        jitter *= 100.0;
    }
    None
}

/// Fits from a zero start. Every class in `0..n_classes` must occur in `y`.
pub fn fit(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    c: f64,
    weighting: &ClassWeighting,
    options: FitOptions,
) -> Result<(LogRegModel, FitSummary), LogRegError> {
    let obj = Objective::new(x, y, n_classes, c, weighting)?;
    for class in 0..n_classes {
        if !y.contains(&class) {
            return Err(LogRegError::MissingClass(class));
        }
    }
    let mut theta = vec![0.0; obj.n_params()];
    let mut f = obj.value(&theta);
    let mut iterations = 0;
    let mut converged = false;
    let mut g = obj.gradient(&theta);
    while iterations < options.max_iter {
        if max_abs(&g) < options.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let dir: Vec<f64> = match newton_direction(obj.hessian(&theta), &g) {
            Some(d) => d.iter().copied().collect(),
            None => g.iter().map(|x| -x).collect(),
        };
        let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-12 {
            let trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let ft = obj.value(&trial);
            if ft <= f + 1e-4 * step * slope {
                theta = trial;
                f = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        g = obj.gradient(&theta);
        if !accepted {
            converged = max_abs(&g) < options.tol;
            break;
        }
    }
    let summary = FitSummary {
        iterations,
        converged,
        gradient_max_abs: max_abs(&g),
        objective: f,
    };
    Ok((obj.to_model(&theta), summary))
}
