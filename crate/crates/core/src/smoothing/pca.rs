//! Principal component scores of a spot x gene matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Pca {
    /// n x k projections of the centered rows.
    pub scores: Array2<f64>,
    /// m x k unit loadings, one column per component.
    pub components: Array2<f64>,
    /// Variance captured by each component (denominator n - 1).
    pub explained_variance: Vec<f64>,
    pub mean: Array1<f64>,
}

impl Pca {
    pub fn reconstruct(&self) -> Array2<f64> {
        self.scores.dot(&self.components.t()) + &self.mean
    }
}

/// Projects the column-centered rows of `expr` onto its top `k` principal
/// axes, taken from a symmetric eigendecomposition of the m x m covariance.
///
/// The eigen route is used rather than an SVD of the data because the
/// latter lost accuracy on rank-deficient inputs, making results depend on
/// row order. Each component's sign is fixed so that its largest-magnitude
/// loading is positive, which makes the output independent of solver sign
/// choices.
pub fn pca_project(expr: &Array2<f64>, k: usize) -> Result<Pca> {
    let (n, m) = expr.dim();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if k == 0 || k > n.min(m) {
        return Err(Error::InvalidParameter(format!(
            "PCA dimension {k} out of range 1..={}",
            n.min(m)
        )));
    }
    let mean = expr.mean_axis(Axis(0)).expect("n >= 2");
    let centered = expr - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    // Symmetrise exactly so the solver sees a symmetric matrix.
    let cov = DMatrix::from_fn(m, m, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut components = Array2::<f64>::zeros((m, k));
    let mut explained_variance = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let col = eig.eigenvectors.column(idx);
        let pivot = (0..m)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..m {
            components[[j, c]] = sign * col[j];
        }
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    let scores = centered.dot(&components);
    Ok(Pca {
        scores,
        components,
        explained_variance,
        mean,
    })
}
