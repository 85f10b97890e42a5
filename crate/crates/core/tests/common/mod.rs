#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stgraph::ingest::{EmbeddingMatrix, SpotRecord, StSample};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn spot(id: &str, row: i64, col: i64) -> SpotRecord {
    SpotRecord {
        spot_id: id.to_string(),
        grid_row: row,
        grid_col: col,
        pixel_x: col as f64 * 100.0,
        pixel_y: row as f64 * 100.0,
    }
}

pub fn grid_spots(rows: i64, cols: i64) -> Vec<SpotRecord> {
    let mut v = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            v.push(spot(&format!("r{r}c{c}"), r, c));
        }
    }
    v
}

pub fn genes(m: usize) -> Vec<String> {
    (0..m).map(|g| format!("g{g}")).collect()
}

pub fn grid_sample(rows: i64, cols: i64, expr: Array2<f64>) -> StSample {
    let spots = grid_spots(rows, cols);
    StSample::new("t", spots, genes(expr.ncols()), expr).unwrap()
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Non-negative count-like matrix with some exact zeros.
pub fn count_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < 0.2 {
            0.0
        } else {
            rng.random_range(0.0..20.0f64).floor()
        }
    })
}

/// A sample on a random subset of a grid (holes and ragged borders).
pub fn random_sample(n_target: usize, m: usize, rng: &mut ChaCha8Rng) -> StSample {
    let side = ((n_target as f64).sqrt() * 1.3).ceil() as i64 + 1;
    let mut cells: Vec<(i64, i64)> = (0..side).flat_map(|r| (0..side).map(move |c| (r, c))).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    cells.truncate(n_target);
    let spots = cells
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| spot(&format!("s{i}"), r, c))
        .collect();
    let expr = count_matrix(n_target, m, rng);
    StSample::new("rand", spots, genes(m), expr).unwrap()
}

pub fn random_embeddings(n: usize, d: usize, rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
    EmbeddingMatrix::new("rand", normal_matrix(n, d, rng)).unwrap()
}

/// Reorders a sample's spots (and matrix rows) so that new index
/// `perm[old]` holds old spot `old`.
pub fn permute_sample(sample: &StSample, perm: &[usize]) -> StSample {
    let n = sample.n_spots();
    let mut spots = vec![sample.spots()[0].clone(); n];
    let mut expr = Array2::zeros(sample.expr_raw().dim());
    for old in 0..n {
        spots[perm[old]] = sample.spots()[old].clone();
        expr.row_mut(perm[old]).assign(&sample.expr_raw().row(old));
    }
    StSample::new(sample.sample_id(), spots, sample.genes().to_vec(), expr).unwrap()
}

pub fn permute_rows(m: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(m.dim());
    for old in 0..m.nrows() {
        out.row_mut(perm[old]).assign(&m.row(old));
    }
    out
}

pub fn random_perm(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

/// Largest absolute element-wise difference between two equal-shape arrays.
pub fn max_abs_diff<D: ndarray::Dimension>(
    a: &ndarray::ArrayRef<f64, D>,
    b: &ndarray::ArrayRef<f64, D>,
) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[macro_export]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let d = $crate::common::max_abs_diff(&$a, &$b);
        assert!(d <= $tol, "max abs difference {d:e} exceeds {:e}", $tol);
    }};
}
