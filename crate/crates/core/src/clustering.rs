//! Hard clustering of spots in grid space and in embedding space.
//!
//! Both clusterings run Lloyd's k-means with k-means++ seeding. The points are
//! processed in a canonical order (lexicographic by coordinates) and the seeding
//! PRNG is keyed by the seed and a hash of the sorted data, so the result does
//! not depend on the order in which spots are listed.

use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{EmbeddingMatrix, StSample};

pub const DEFAULT_CLUSTER_SIZE: usize = 100;
pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// c x p cluster means.
    pub means: Array2<f64>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
    /// Set when seeding or the final repair had to fall back on tie rules
    /// (fewer distinct points than clusters).
    pub degenerate: bool,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn canonical_order(points: &Array2<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.nrows()).collect();
    order.sort_by(|&a, &b| {
        points
            .row(a)
            .iter()
            .zip(points.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

fn keyed_rng(seed: u64, canonical: &Array2<f64>) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((canonical.nrows() as u64).to_le_bytes());
    h.update((canonical.ncols() as u64).to_le_bytes());
    for v in canonical.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Lloyd's k-means with k-means++ seeding.
///
/// A cluster that empties during iteration has its mean moved to the point
/// farthest from its own assigned mean (ties to the lower canonical position).
/// If the data has fewer distinct points than `c`, empty clusters left after
/// convergence take the farthest member of the largest cluster so every
/// cluster id is used; the result is then marked degenerate.
pub fn kmeans(points: &Array2<f64>, c: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let n = points.nrows();
    if c == 0 || c > n {
        return Err(Error::InvalidParameter(format!(
            "k-means needs 1 <= c <= n, got c = {c}, n = {n}"
        )));
    }
    let order = canonical_order(points);
    let mut data = Array2::<f64>::zeros(points.dim());
    for (pos, &i) in order.iter().enumerate() {
        data.row_mut(pos).assign(&points.row(i));
    }
    let mut rng = keyed_rng(seed, &data);
    let (mut means, mut degenerate) = plus_plus_init(&data, c, &mut rng);

    let mut assign = vec![usize::MAX; n];
    let mut inertia_history = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let (changed, inertia) = assign_points(&data, &means, &mut assign);
        inertia_history.push(inertia);
        if !changed {
            converged = true;
            break;
        }
        update_means(&data, &assign, &mut means);
    }

    degenerate |= repair_empty(&data, &mut assign, &mut means);

    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = assign[pos];
    }
    Ok(KMeansResult {
        assignments,
        means,
        inertia_history,
        converged,
        degenerate,
    })
}

fn plus_plus_init(data: &Array2<f64>, c: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, bool) {
    let n = data.nrows();
    let mut means = Array2::<f64>::zeros((c, data.ncols()));
    let mut chosen = vec![false; n];
    let mut degenerate = false;
    let first = rng.random_range(0..n);
    chosen[first] = true;
    means.row_mut(0).assign(&data.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(first))).collect();
    for k in 1..c {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave target >= acc; take the last positive weight.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            degenerate = true;
            (0..n).find(|&i| !chosen[i]).expect("c <= n")
        };
        chosen[pick] = true;
        means.row_mut(k).assign(&data.row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(data.row(i), data.row(pick)));
        }
    }
    (means, degenerate)
}

fn nearest(point: ArrayView1<f64>, means: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, m) in means.rows().into_iter().enumerate() {
        let d = sq_dist(point, m);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn assign_points(data: &Array2<f64>, means: &Array2<f64>, assign: &mut [usize]) -> (bool, f64) {
    let mut changed = false;
    let mut inertia = 0.0;
    for (i, slot) in assign.iter_mut().enumerate() {
        let (k, d) = nearest(data.row(i), means);
        if *slot != k {
            *slot = k;
            changed = true;
        }
        inertia += d;
    }
    (changed, inertia)
}

fn update_means(data: &Array2<f64>, assign: &[usize], means: &mut Array2<f64>) {
    let c = means.nrows();
    let mut sums = Array2::<f64>::zeros(means.dim());
    let mut counts = vec![0usize; c];
    for (i, &k) in assign.iter().enumerate() {
        let mut row = sums.row_mut(k);
        row += &data.row(i);
        counts[k] += 1;
    }
    let mut used = vec![false; data.nrows()];
    for k in 0..c {
        if counts[k] > 0 {
            let mean = &sums.row(k) / counts[k] as f64;
            means.row_mut(k).assign(&mean);
        }
    }
    for k in 0..c {
        if counts[k] == 0 {
            // Farthest point from the mean it is currently assigned to.
            let mut best: Option<(usize, f64)> = None;
            for (i, &a) in assign.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let d = sq_dist(data.row(i), means.row(a));
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
            if let Some((i, _)) = best {
                used[i] = true;
                means.row_mut(k).assign(&data.row(i));
            }
        }
    }
}

fn repair_empty(data: &Array2<f64>, assign: &mut [usize], means: &mut Array2<f64>) -> bool {
    let c = means.nrows();
    let mut repaired = false;
    loop {
        let mut counts = vec![0usize; c];
        for &k in assign.iter() {
            counts[k] += 1;
        }
        let Some(empty) = counts.iter().position(|&x| x == 0) else {
            break;
        };
        repaired = true;
        let largest = (0..c)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("c >= 1");
        let mut best: Option<(usize, f64)> = None;
        for (i, &k) in assign.iter().enumerate() {
            if k == largest {
                let d = sq_dist(data.row(i), means.row(k));
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
        }
        let (i, _) = best.expect("largest cluster is non-empty");
        assign[i] = empty;
        means.row_mut(empty).assign(&data.row(i));
    }
    repaired
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterKind {
    Spatial,
    Feature,
}

impl fmt::Display for ClusterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterKind::Spatial => "spatial",
            ClusterKind::Feature => "feature",
        })
    }
}

/// One clustering of a sample's spots with the hub spot of each cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub kind: ClusterKind,
    pub assignments: Vec<usize>,
    pub centroid_spot: Vec<usize>,
    pub target_cluster_size: usize,
    pub degenerate: bool,
}

impl ClusterModel {
    /// Builds a model from assignments, choosing each hub with
    /// [`select_centroid_spot`].
    pub fn from_assignments(
        kind: ClusterKind,
        assignments: Vec<usize>,
        n_clusters: usize,
        embeddings: &EmbeddingMatrix,
        target_cluster_size: usize,
    ) -> Result<Self> {
        let mut members = vec![Vec::new(); n_clusters];
        for (i, &k) in assignments.iter().enumerate() {
            if k >= n_clusters {
                return Err(Error::InvalidParameter(format!(
                    "cluster id {k} out of range for {n_clusters} clusters"
                )));
            }
            members[k].push(i);
        }
        let centroid_spot = members
            .iter()
            .enumerate()
            .map(|(k, m)| {
                if m.is_empty() {
                    Err(Error::InvalidParameter(format!("cluster {k} is empty")))
                } else {
                    Ok(select_centroid_spot(m, embeddings))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            assignments,
            centroid_spot,
            target_cluster_size,
            degenerate: false,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.centroid_spot.len()
    }

    pub fn n_spots(&self) -> usize {
        self.assignments.len()
    }

    /// Members of cluster `k` in ascending spot order.
    pub fn members(&self, k: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a == k)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_centroid(&self, spot: usize) -> bool {
        self.centroid_spot[self.assignments[spot]] == spot
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.n_clusters();
        if c == 0 {
            return Err(Error::InvalidParameter("clustering has no clusters".into()));
        }
        let mut sizes = vec![0usize; c];
        for &k in &self.assignments {
            if k >= c {
                return Err(Error::InvalidParameter(format!("cluster id {k} >= {c}")));
            }
            sizes[k] += 1;
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidParameter(format!("cluster {k} is empty")));
        }
        for (k, &spot) in self.centroid_spot.iter().enumerate() {
            if self.assignments.get(spot) != Some(&k) {
                return Err(Error::InvalidParameter(format!(
                    "centroid spot {spot} is not a member of cluster {k}"
                )));
            }
        }
        Ok(())
    }
}

/// `ceil(n / target)`, at least 1.
pub fn cluster_count(n: usize, target_cluster_size: usize) -> usize {
    n.div_ceil(target_cluster_size.max(1)).max(1)
}

/// The member closest (Euclidean) to the members' mean embedding; ties go to
/// the lowest spot index.
pub fn select_centroid_spot(members: &[usize], embeddings: &EmbeddingMatrix) -> usize {
    assert!(!members.is_empty(), "centroid of an empty cluster");
    let data = embeddings.data();
    let mut mean = Array1::<f64>::zeros(data.ncols());
    for &i in members {
        mean += &data.row(i);
    }
    mean /= members.len() as f64;
    let mut best = (usize::MAX, f64::INFINITY);
    for &i in members {
        let d = sq_dist(data.row(i), mean.view());
        if d < best.1 || (d == best.1 && i < best.0) {
            best = (i, d);
        }
    }
    best.0
}

fn cluster_points(
    kind: ClusterKind,
    points: &Array2<f64>,
    embeddings: &EmbeddingMatrix,
    target_cluster_size: usize,
    seed: u64,
) -> Result<ClusterModel> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::InvalidParameter("cannot cluster zero spots".into()));
    }
    if embeddings.n_rows() != n {
        return Err(Error::RowCountMismatch {
            what: "embeddings".into(),
            expected: n,
            found: embeddings.n_rows(),
        });
    }
    let c = cluster_count(n, target_cluster_size);
    let km = kmeans(points, c, seed, DEFAULT_MAX_ITER)?;
    if km.degenerate {
        log::warn!("{kind} clustering is degenerate: fewer distinct points than {c} clusters");
    }
    let mut model =
        ClusterModel::from_assignments(kind, km.assignments, c, embeddings, target_cluster_size)?;
    model.degenerate = km.degenerate;
    Ok(model)
}

/// k-means over `(grid_row, grid_col)`.
pub fn cluster_spatial(
    sample: &StSample,
    embeddings: &EmbeddingMatrix,
    target_cluster_size: usize,
    seed: u64,
) -> Result<ClusterModel> {
    let points = Array2::from_shape_fn((sample.n_spots(), 2), |(i, j)| {
        let s = &sample.spots()[i];
        if j == 0 {
            s.grid_row as f64
        } else {
            s.grid_col as f64
        }
    });
    cluster_points(ClusterKind::Spatial, &points, embeddings, target_cluster_size, seed)
}

/// k-means over embedding rows.
pub fn cluster_feature(
    embeddings: &EmbeddingMatrix,
    target_cluster_size: usize,
    seed: u64,
) -> Result<ClusterModel> {
    cluster_points(
        ClusterKind::Feature,
        embeddings.data(),
        embeddings,
        target_cluster_size,
        seed,
    )
}

/// Writes `spot_id, spatial_cluster, feature_cluster, is_spatial_centroid, is_feature_centroid`.
pub fn write_assignments(
    path: &Path,
    sample: &StSample,
    spatial: &ClusterModel,
    feature: &ClusterModel,
) -> Result<()> {
    let mut out = String::from(
        "spot_id\tspatial_cluster\tfeature_cluster\tis_spatial_centroid\tis_feature_centroid\n",
    );
    for (i, s) in sample.spots().iter().enumerate() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.spot_id,
            spatial.assignments[i],
            feature.assignments[i],
            u8::from(spatial.is_centroid(i)),
            u8::from(feature.is_centroid(i)),
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
