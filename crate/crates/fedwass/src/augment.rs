//! Label-aware point representations. Each labeled point (x, y) becomes the
//! stacked vector [x; m_y; vec(Sigma_y^{1/2})] so that plain Euclidean
//! distance between stacked rows reproduces the composite feature+label
//! distance. Every party computes class statistics from its own local data
//! only.
//!
//! Note the square-root convention: the label term is
//! ||Sigma_y^{1/2} - Sigma_{y'}^{1/2}||_F^2, which is what the stacked-vector
//! construction realizes. Covariances use the maximum-likelihood (1/n)
//! normalization.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::measure::DiscreteMeasure;

/// Threshold above which full d x d covariance blocks become prohibitive and
/// diagonal mode is selected automatically.
pub const DIAGONAL_DIM_THRESHOLD: usize = 32;

/// Default ridge added to class covariances, relative to tr(Sigma)/d.
pub const DEFAULT_REGULARIZATION: f64 = 1e-6;

/// Features plus integer labels in [0, num_classes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() == 0 {
            return input_err("labeled dataset needs at least one point");
        }
        if features.nrows() != labels.len() {
            return input_err("feature rows and labels disagree in length");
        }
        if num_classes == 0 || labels.iter().any(|&y| y >= num_classes) {
            return input_err("labels must lie in [0, num_classes)");
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Mean and (regularized) covariance square root of one class.
#[derive(Debug, Clone)]
pub struct ClassStat {
    pub label: usize,
    pub count: usize,
    pub mean: Array1<f64>,
    /// Regularized covariance, full or diagonal.
    pub cov: CovBlock,
    /// Symmetric PSD square root of `cov`.
    pub sqrt_cov: CovBlock,
    /// True when the class was empty and fell back to zero mean and a
    /// regularized identity covariance.
    pub degenerate: bool,
}

/// Full matrix or diagonal covariance representation.
#[derive(Debug, Clone)]
pub enum CovBlock {
    Full(Array2<f64>),
    Diagonal(Array1<f64>),
}

impl CovBlock {
    /// Flattened entries as they appear in the stacked vector.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            CovBlock::Full(m) => m.iter().copied().collect(),
            CovBlock::Diagonal(d) => d.to_vec(),
        }
    }

    pub fn frobenius_sq_diff(&self, other: &CovBlock) -> f64 {
        let a = self.flatten();
        let b = other.flatten();
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    }
}

/// Per-class statistics of one dataset.
#[derive(Debug, Clone)]
pub struct ClassStats {
    pub stats: Vec<ClassStat>,
    pub dim: usize,
    pub diagonal: bool,
}

impl ClassStats {
    pub fn for_label(&self, y: usize) -> Option<&ClassStat> {
        self.stats.get(y)
    }

    /// Length of the trailing label block in a stacked row.
    pub fn label_block_len(&self) -> usize {
        if self.diagonal {
            2 * self.dim
        } else {
            self.dim + self.dim * self.dim
        }
    }
}

/// Stacked rows [x; m_y; vec(Sigma_y^{1/2})] with labels kept for reporting.
#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    pub stacked: Array2<f64>,
    pub labels: Vec<usize>,
    pub feature_dim: usize,
}

impl AugmentedDataset {
    pub fn len(&self) -> usize {
        self.stacked.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.stacked.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.stacked.ncols()
    }

    /// Uniform empirical measure over the stacked rows.
    pub fn to_measure(&self) -> Result<DiscreteMeasure> {
        DiscreteMeasure::uniform(self.stacked.clone())
    }
}

/// Symmetric PSD square root via eigendecomposition, negative eigenvalues
/// clamped to zero.
fn symmetric_sqrt(m: &Array2<f64>) -> Array2<f64> {
    let d = m.nrows();
    let nm = nalgebra::DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(nm);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = eig.eigenvectors;
    let sqrt = &q * nalgebra::DMatrix::from_diagonal(&vals) * q.transpose();
    Array2::from_shape_fn((d, d), |(i, j)| sqrt[(i, j)])
}

/// Per-class mean, regularized ML covariance and its PSD square root.
///
/// `regularization` scales a ridge of (tr Sigma / d) * I added to each class
/// covariance (a plain identity for zero-variance classes). Empty classes get
/// zero mean and a regularized identity, flagged `degenerate`.
pub fn class_stats(
    data: &LabeledDataset,
    regularization: f64,
    diagonal_only: bool,
) -> Result<ClassStats> {
    if regularization < 0.0 {
        return input_err("class_stats: regularization must be >= 0");
    }
    let d = data.dim();
    let diagonal = diagonal_only || d > DIAGONAL_DIM_THRESHOLD;
    let mut stats = Vec::with_capacity(data.num_classes);
    for y in 0..data.num_classes {
        let rows: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == y).collect();
        if rows.is_empty() {
            let reg = regularization.max(f64::MIN_POSITIVE);
            let (cov, sqrt_cov) = if diagonal {
                (
                    CovBlock::Diagonal(Array1::from_elem(d, reg)),
                    CovBlock::Diagonal(Array1::from_elem(d, reg.sqrt())),
                )
            } else {
                (
                    CovBlock::Full(Array2::eye(d) * reg),
                    CovBlock::Full(Array2::eye(d) * reg.sqrt()),
                )
            };
            stats.push(ClassStat {
                label: y,
                count: 0,
                mean: Array1::zeros(d),
                cov,
                sqrt_cov,
                degenerate: true,
            });
            continue;
        }
        let n = rows.len() as f64;
        let mut mean = Array1::<f64>::zeros(d);
        for &i in &rows {
            mean += &data.features.row(i);
        }
        mean /= n;

        if diagonal {
            let mut var = Array1::<f64>::zeros(d);
            for &i in &rows {
                for c in 0..d {
                    let dv = data.features[[i, c]] - mean[c];
                    var[c] += dv * dv;
                }
            }
            var /= n;
            let trace: f64 = var.sum();
            let scale = if trace > 0.0 { trace / d as f64 } else { 1.0 };
            let ridge = regularization * scale;
            let var = var.map(|&v| v + ridge);
            let sqrt = var.map(|&v| v.max(0.0).sqrt());
            stats.push(ClassStat {
                label: y,
                count: rows.len(),
                mean,
                cov: CovBlock::Diagonal(var),
                sqrt_cov: CovBlock::Diagonal(sqrt),
                degenerate: false,
            });
        } else {
            let mut cov = Array2::<f64>::zeros((d, d));
            for &i in &rows {
                for r in 0..d {
                    let dr = data.features[[i, r]] - mean[r];
                    for c in 0..d {
                        let dc = data.features[[i, c]] - mean[c];
                        cov[[r, c]] += dr * dc;
                    }
                }
            }
            cov /= n;
            let trace: f64 = (0..d).map(|i| cov[[i, i]]).sum();
            let scale = if trace > 0.0 { trace / d as f64 } else { 1.0 };
            let ridge = regularization * scale;
            for i in 0..d {
                cov[[i, i]] += ridge;
            }
            let sqrt = symmetric_sqrt(&cov);
            stats.push(ClassStat {
                label: y,
                count: rows.len(),
                mean,
                cov: CovBlock::Full(cov),
                sqrt_cov: CovBlock::Full(sqrt),
                degenerate: false,
            });
        }
    }
    Ok(ClassStats {
        stats,
        dim: d,
        diagonal,
    })
}

/// Builds the stacked representation of `data` using `stats`.
pub fn stack(data: &LabeledDataset, stats: &ClassStats) -> Result<AugmentedDataset> {
    let d = data.dim();
    if stats.dim != d {
        return input_err("stack: stats dimension does not match data");
    }
    if data.labels.iter().any(|&y| y >= stats.stats.len()) {
        return input_err("stack: missing class stats for a present label");
    }
    let block = stats.label_block_len();
    let width = d + block;
    let mut stacked = Array2::<f64>::zeros((data.len(), width));
    for i in 0..data.len() {
        let y = data.labels[i];
        let stat = &stats.stats[y];
        for c in 0..d {
            stacked[[i, c]] = data.features[[i, c]];
        }
        for c in 0..d {
            stacked[[i, d + c]] = stat.mean[c];
        }
        for (k, v) in stat.sqrt_cov.flatten().into_iter().enumerate() {
            stacked[[i, 2 * d + k]] = v;
        }
    }
    Ok(AugmentedDataset {
        stacked,
        labels: data.labels.clone(),
        feature_dim: d,
    })
}

/// Squared 2-Wasserstein distance between two class-conditional Gaussians in
/// the stacked-vector convention:
/// ||m_a - m_b||^2 + ||Sigma_a^{1/2} - Sigma_b^{1/2}||_F^2.
pub fn gaussian_w2_squared(a: &ClassStat, b: &ClassStat) -> f64 {
    let mean_sq: f64 = a
        .mean
        .iter()
        .zip(b.mean.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    mean_sq + a.sqrt_cov.frobenius_sq_diff(&b.sqrt_cov)
}

fn sq_norm_diff(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The composite distance the stacked rows are meant to realize; used by
/// tests to cross-check `stack`.
pub fn composite_distance(
    x: ArrayView1<'_, f64>,
    y: usize,
    x2: ArrayView1<'_, f64>,
    y2: usize,
    stats: &ClassStats,
) -> f64 {
    let a = &stats.stats[y];
    let b = &stats.stats[y2];
    (sq_norm_diff(x, x2) + gaussian_w2_squared(a, b)).sqrt()
}
