//! Expression smoothing: eight-neighbour averaging and two-factor
//! spatial + transcriptome-pattern smoothing (SPCS).

mod pca;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::StSample;

pub use pca::{pca_project, Pca};

/// Parameters of the two-factor smoother.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpcsParams {
    /// Spatial radius in Manhattan grid units.
    pub tau_s: u32,
    /// Number of nearest spots in pattern space.
    pub tau_p: u32,
    /// Weight of the smoothed estimate against the spot's own value.
    pub alpha: f64,
    /// Weight of the spatial term against the pattern term.
    pub beta: f64,
    pub pca_dim: usize,
}

impl Default for SpcsParams {
    fn default() -> Self {
        Self {
            tau_s: 2,
            tau_p: 16,
            alpha: 0.6,
            beta: 0.4,
            pca_dim: 10,
        }
    }
}

impl SpcsParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!(
                "beta must be in [0, 1], got {}",
                self.beta
            )));
        }
        if self.pca_dim == 0 {
            return Err(Error::InvalidParameter("pca_dim must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingMethod {
    None,
    #[serde(rename = "8n")]
    EightNeighbor,
    Spcs,
}

impl fmt::Display for SmoothingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SmoothingMethod::None => "none",
            SmoothingMethod::EightNeighbor => "8n",
            SmoothingMethod::Spcs => "spcs",
        })
    }
}

impl FromStr for SmoothingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SmoothingMethod::None),
            "8n" => Ok(SmoothingMethod::EightNeighbor),
            "spcs" => Ok(SmoothingMethod::Spcs),
            other => Err(Error::InvalidParameter(format!(
                "unknown smoothing method {other:?} (expected none, 8n or spcs)"
            ))),
        }
    }
}

/// Sidecar written next to every smoothed matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingMetadata {
    pub sample_id: String,
    pub method: SmoothingMethod,
    pub spcs: Option<SpcsParams>,
    pub seed: u64,
    pub n_spots: usize,
    pub n_genes: usize,
    /// Spots whose PCA score row had zero variance (pattern distance clamped to 2).
    pub zero_variance_spots: usize,
}

/// `ln(1 + 1e6 * x / rowsum)` per entry; all-zero rows stay zero.
pub fn logcpm(expr: &Array2<f64>) -> Array2<f64> {
    let mut out = expr.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.mapv_inplace(|x| (1e6 * x / total).ln_1p());
        } else {
            row.fill(0.0);
        }
    }
    out
}

/// Replaces each spot by the mean of itself and its existing grid neighbours.
pub fn smooth_8n(sample: &StSample) -> Array2<f64> {
    smooth_8n_matrix(sample, sample.expr_raw())
}

/// As [`smooth_8n`] but over an arbitrary matrix aligned to the sample's spots.
pub fn smooth_8n_matrix(sample: &StSample, values: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(values.dim());
    for i in 0..sample.n_spots() {
        let mut members = sample.eight_neighbors(i);
        members.push(i);
        members.sort_unstable();
        let mut acc = out.row_mut(i);
        for &j in &members {
            acc += &values.row(j);
        }
        acc /= members.len() as f64;
    }
    out
}

/// Pearson correlation distance `1 - r` between two score rows, in [0, 2].
///
/// A row with zero variance has no defined correlation; the distance is then
/// the maximum, 2.
pub fn pattern_distance(scores: &Array2<f64>, i: usize, j: usize) -> f64 {
    match (centered_unit(scores.row(i)), centered_unit(scores.row(j))) {
        (Some(a), Some(b)) => correlation_distance(&a, &b),
        _ => {
            log::debug!("zero-variance score row in pattern distance ({i}, {j})");
            2.0
        }
    }
}

fn centered_unit(row: ArrayView1<f64>) -> Option<Vec<f64>> {
    let n = row.len() as f64;
    let mean = row.sum() / n;
    let centered: Vec<f64> = row.iter().map(|x| x - mean).collect();
    let norm = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Rows that are constant up to rounding have no usable direction.
    if norm <= 1e-12 * (1.0 + mean.abs()) * n.sqrt() {
        return None;
    }
    Some(centered.into_iter().map(|x| x / norm).collect())
}

fn correlation_distance(a: &[f64], b: &[f64]) -> f64 {
    let r: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - r.clamp(-1.0, 1.0)).clamp(0.0, 2.0)
}

/// Output of [`spcs_smooth`]: the smoothed logCPM matrix plus diagnostics.
#[derive(Debug, Clone)]
pub struct SpcsOutput {
    pub smoothed: Array2<f64>,
    pub zero_variance_spots: usize,
}

/// Two-factor smoothing of the sample's raw expression.
///
/// Rows are first logCPM-normalised (`y`). For spot `s` the result is
/// `(1 - alpha) * y_s + alpha * (beta * spatial_s + (1 - beta) * pattern_s)` where
///
/// * `spatial_s` averages spots at Manhattan grid distance `1..=tau_s` with
///   weights `1 / d`;
/// * `pattern_s` averages the `tau_p` spots closest in Pearson distance over
///   `pca_dim` principal-component scores, with weights `exp(-dist)`.
///
/// Each weighted mean is normalised to unit total weight; an empty
/// neighbourhood contributes `y_s` instead. Ties in the pattern ranking go to
/// the lower spot index.
pub fn spcs_smooth(sample: &StSample, params: &SpcsParams) -> Result<SpcsOutput> {
    params.validate()?;
    let y = logcpm(sample.expr_raw());
    let n = sample.n_spots();
    if n == 0 {
        return Ok(SpcsOutput {
            smoothed: y,
            zero_variance_spots: 0,
        });
    }

    let need_pattern = params.alpha > 0.0 && params.beta < 1.0 && params.tau_p > 0 && n > 1;
    let (unit_rows, zero_variance_spots) = if need_pattern {
        let k = params.pca_dim.min(n).min(sample.n_genes());
        if k < params.pca_dim {
            log::warn!(
                "{}: pca_dim {} clamped to {k}",
                sample.sample_id(),
                params.pca_dim
            );
        }
        let pca = pca_project(&y, k)?;
        let rows: Vec<Option<Vec<f64>>> = pca.scores.rows().into_iter().map(centered_unit).collect();
        let zv = rows.iter().filter(|r| r.is_none()).count();
        if zv > 0 {
            log::warn!(
                "{}: {zv} spots have zero-variance PCA scores; their pattern distances are set to 2",
                sample.sample_id()
            );
        }
        (rows, zv)
    } else {
        (Vec::new(), 0)
    };

    let offsets = manhattan_offsets(params.tau_s as i64);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let own = y.row(s);
            if params.alpha == 0.0 {
                return own.to_vec();
            }
            let spatial = spatial_term(sample, &y, s, &offsets);
            let pattern = if need_pattern {
                pattern_term(&y, &unit_rows, s, params.tau_p as usize)
            } else {
                None
            };
            let spatial = spatial.unwrap_or_else(|| own.to_vec());
            let pattern = pattern.unwrap_or_else(|| own.to_vec());
            own.iter()
                .zip(spatial.iter().zip(&pattern))
                .map(|(&o, (&sp, &pa))| {
                    (1.0 - params.alpha) * o
                        + params.alpha * (params.beta * sp + (1.0 - params.beta) * pa)
                })
                .collect()
        })
        .collect();

    let mut smoothed = Array2::zeros(y.dim());
    for (i, r) in rows.into_iter().enumerate() {
        smoothed.row_mut(i).assign(&ArrayView1::from(&r));
    }
    Ok(SpcsOutput {
        smoothed,
        zero_variance_spots,
    })
}

/// Grid offsets with Manhattan norm in `1..=radius`.
fn manhattan_offsets(radius: i64) -> Vec<(i64, i64, f64)> {
    let mut v = Vec::new();
    for dr in -radius..=radius {
        let rest = radius - dr.abs();
        for dc in -rest..=rest {
            let d = dr.abs() + dc.abs();
            if d > 0 {
                v.push((dr, dc, d as f64));
            }
        }
    }
    v
}

fn weighted_mean(y: &Array2<f64>, mut weighted: Vec<(usize, f64)>) -> Option<Vec<f64>> {
    if weighted.is_empty() {
        return None;
    }
    weighted.sort_by_key(|&(j, _)| j);
    let total: f64 = weighted.iter().map(|&(_, w)| w).sum();
    let mut acc = vec![0.0; y.ncols()];
    for (j, w) in weighted {
        let w = w / total;
        for (a, v) in acc.iter_mut().zip(y.row(j)) {
            *a += w * v;
        }
    }
    Some(acc)
}

fn spatial_term(
    sample: &StSample,
    y: &Array2<f64>,
    s: usize,
    offsets: &[(i64, i64, f64)],
) -> Option<Vec<f64>> {
    let spot = &sample.spots()[s];
    let members: Vec<(usize, f64)> = offsets
        .iter()
        .filter_map(|&(dr, dc, d)| {
            sample
                .spot_at(spot.grid_row + dr, spot.grid_col + dc)
                .map(|j| (j, 1.0 / d))
        })
        .collect();
    weighted_mean(y, members)
}

fn pattern_term(
    y: &Array2<f64>,
    unit_rows: &[Option<Vec<f64>>],
    s: usize,
    tau_p: usize,
) -> Option<Vec<f64>> {
    let mut dists: Vec<(usize, f64)> = (0..unit_rows.len())
        .filter(|&j| j != s)
        .map(|j| {
            let d = match (&unit_rows[s], &unit_rows[j]) {
                (Some(a), Some(b)) => correlation_distance(a, b),
                _ => 2.0,
            };
            (j, d)
        })
        .collect();
    dists.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    dists.truncate(tau_p);
    weighted_mean(y, dists.into_iter().map(|(j, d)| (j, (-d).exp())).collect())
}

/// Applies `method` to a sample and returns values in logCPM space, which is
/// the representation used as regression targets.
pub fn prepare_targets(
    sample: &StSample,
    method: SmoothingMethod,
    params: &SpcsParams,
) -> Result<Array2<f64>> {
    Ok(match method {
        SmoothingMethod::None => logcpm(sample.expr_raw()),
        SmoothingMethod::EightNeighbor => logcpm(&smooth_8n(sample)),
        SmoothingMethod::Spcs => spcs_smooth(sample, params)?.smoothed,
    })
}
