mod common;

use ndarray::Array2;
use proptest::prelude::*;
use stgraph::clustering::{
    cluster_count, cluster_feature, cluster_spatial, kmeans, select_centroid_spot,
};
use stgraph::ingest::{EmbeddingMatrix, StSample};
use stgraph::metrics::adjusted_rand_index;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn inertia(points: &Array2<f64>, assign: &[usize], means: &Array2<f64>) -> f64 {
    (0..points.nrows())
        .map(|i| sq(&points.row(i).to_vec(), &means.row(assign[i]).to_vec()))
        .sum()
}

#[test]
fn two_blobs_separate() {
    let mut rng = common::rng(1);
    let noise = common::normal_matrix(40, 2, &mut rng).mapv(|v| v.clamp(-1.0, 1.0));
    let pts = Array2::from_shape_fn((40, 2), |(i, j)| {
        let c = if i < 20 { -50.0 } else { 50.0 };
        c + noise[[i, j]]
    });
    let km = kmeans(&pts, 2, 3927, 300).unwrap();
    let truth: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
    assert_eq!(adjusted_rand_index(&km.assignments, &truth), 1.0);
    assert!(km.converged);
}

#[test]
fn one_cluster_per_point_has_zero_inertia() {
    let mut rng = common::rng(2);
    let pts = common::normal_matrix(12, 3, &mut rng);
    let km = kmeans(&pts, 12, 0, 300).unwrap();
    assert_eq!(km.inertia(), 0.0);
    let mut seen = km.assignments.clone();
    seen.sort_unstable();
    assert_eq!(seen, (0..12).collect::<Vec<_>>());
}

#[test]
fn invalid_cluster_count_is_rejected() {
    let pts = Array2::<f64>::zeros((3, 2));
    assert!(kmeans(&pts, 0, 0, 10).is_err());
    assert!(kmeans(&pts, 4, 0, 10).is_err());
}

#[test]
fn cluster_count_examples() {
    assert_eq!(cluster_count(450, 100), 5);
    assert_eq!(cluster_count(9, 100), 1);
    assert_eq!(cluster_count(400, 100), 4);
}

#[test]
fn quadrants_give_contiguous_spatial_clusters() {
    let s = common::grid_sample(20, 20, Array2::ones((400, 1)));
    let mut rng = common::rng(3);
    let emb = common::random_embeddings(400, 4, &mut rng);
    let cm = cluster_spatial(&s, &emb, 100, 3927).unwrap();
    assert_eq!(cm.n_clusters(), 4);
    cm.validate().unwrap();
    // Bounding boxes of the clusters must not overlap.
    let boxes: Vec<(i64, i64, i64, i64)> = (0..4)
        .map(|k| {
            let m = cm.members(k);
            let rows = m.iter().map(|&i| s.spots()[i].grid_row);
            let cols = m.iter().map(|&i| s.spots()[i].grid_col);
            (rows.clone().min().unwrap(), rows.max().unwrap(), cols.clone().min().unwrap(), cols.max().unwrap())
        })
        .collect();
    for a in 0..4 {
        for b in a + 1..4 {
            let (x, y) = (boxes[a], boxes[b]);
            let disjoint = x.1 < y.0 || y.1 < x.0 || x.3 < y.2 || y.3 < x.2;
            assert!(disjoint, "clusters {a} and {b} overlap: {x:?} {y:?}");
        }
    }
    let quadrant: Vec<usize> = s
        .spots()
        .iter()
        .map(|p| usize::from(p.grid_row >= 10) * 2 + usize::from(p.grid_col >= 10))
        .collect();
    assert_eq!(adjusted_rand_index(&cm.assignments, &quadrant), 1.0);
}

#[test]
fn feature_clusters_recover_orthogonal_prototypes() {
    let n = 90;
    let labels: Vec<usize> = (0..n).map(|i| (i * 7) % 3).collect();
    let mut rng = common::rng(4);
    let noise = common::normal_matrix(n, 6, &mut rng);
    let data = Array2::from_shape_fn((n, 6), |(i, j)| {
        f64::from(u8::from(j == labels[i])) * 5.0 + 0.1 * noise[[i, j]]
    });
    let emb = EmbeddingMatrix::new("p", data).unwrap();
    let cm = cluster_feature(&emb, 30, 3927).unwrap();
    assert_eq!(cm.n_clusters(), 3);
    assert_eq!(adjusted_rand_index(&cm.assignments, &labels), 1.0);
    assert!(!cm.degenerate);
}

#[test]
fn identical_embeddings_are_flagged_degenerate() {
    let emb = EmbeddingMatrix::new("d", Array2::from_elem((10, 3), 0.5)).unwrap();
    let cm = cluster_feature(&emb, 4, 1).unwrap();
    assert_eq!(cm.n_clusters(), 3);
    cm.validate().unwrap();
    assert!(cm.degenerate);
}

#[test]
fn centroid_is_closest_member() {
    // Members at 0.1, 0.5 and 0.9 from their mean along one axis.
    let data = ndarray::array![[0.1], [-0.5], [0.9], [-0.5], [100.0]];
    let emb = EmbeddingMatrix::new("c", data).unwrap();
    // Mean of {0, 1, 2, 3} is 0.0; spot 0 is nearest.
    assert_eq!(select_centroid_spot(&[0, 1, 2, 3], &emb), 0);
    assert_eq!(select_centroid_spot(&[4], &emb), 4);
    // Equal distances go to the lower index.
    assert_eq!(select_centroid_spot(&[1, 3], &emb), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn inertia_never_increases(seed in any::<u64>(), n in 2usize..80, c in 1usize..8) {
        let c = c.min(n);
        let mut rng = common::rng(seed);
        let pts = common::normal_matrix(n, 3, &mut rng);
        let km = kmeans(&pts, c, seed, 300).unwrap();
        for w in km.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
        if !km.degenerate {
            let direct = inertia(&pts, &km.assignments, &km.means);
            prop_assert!((direct - km.inertia()).abs() <= 1e-9 * (1.0 + direct));
        }
    }

    #[test]
    fn centroid_matches_exhaustive_search(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = common::rng(seed);
        let emb = common::random_embeddings(n, 4, &mut rng);
        let members: Vec<usize> = (0..n).filter(|i| i % 3 != 1 || n < 3).collect();
        let d = emb.data();
        let mean: Vec<f64> = (0..4)
            .map(|j| members.iter().map(|&i| d[[i, j]]).sum::<f64>() / members.len() as f64)
            .collect();
        let best = members
            .iter()
            .copied()
            .min_by(|&a, &b| sq(&d.row(a).to_vec(), &mean).total_cmp(&sq(&d.row(b).to_vec(), &mean)).then(a.cmp(&b)))
            .unwrap();
        prop_assert_eq!(select_centroid_spot(&members, &emb), best);
    }

    #[test]
    fn clustering_is_a_partition_and_reproducible(seed in any::<u64>(), n in 1usize..200, size in 1usize..60) {
        let mut rng = common::rng(seed);
        let s = common::random_sample(n, 1, &mut rng);
        let emb = common::random_embeddings(n, 3, &mut rng);
        for cm in [cluster_spatial(&s, &emb, size, seed).unwrap(), cluster_feature(&emb, size, seed).unwrap()] {
            prop_assert_eq!(cm.n_clusters(), cluster_count(n, size));
            prop_assert!(cm.validate().is_ok());
            let total: usize = (0..cm.n_clusters()).map(|k| cm.members(k).len()).sum();
            prop_assert_eq!(total, n);
        }
        prop_assert_eq!(cluster_spatial(&s, &emb, size, seed).unwrap(), cluster_spatial(&s, &emb, size, seed).unwrap());
        prop_assert_eq!(cluster_feature(&emb, size, seed).unwrap(), cluster_feature(&emb, size, seed).unwrap());
    }

    #[test]
    fn clustering_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..120) {
        let mut rng = common::rng(seed);
        let s = common::random_sample(n, 1, &mut rng);
        let emb = common::random_embeddings(n, 3, &mut rng);
        let perm = common::random_perm(n, &mut rng);
        let t: StSample = common::permute_sample(&s, &perm);
        let emb_t = EmbeddingMatrix::new("p", common::permute_rows(emb.data(), &perm)).unwrap();
        let a = cluster_feature(&emb, 25, 7).unwrap();
        let b = cluster_feature(&emb_t, 25, 7).unwrap();
        for old in 0..n {
            prop_assert_eq!(a.assignments[old], b.assignments[perm[old]]);
        }
        for k in 0..a.n_clusters() {
            prop_assert_eq!(perm[a.centroid_spot[k]], b.centroid_spot[k]);
        }
        let a = cluster_spatial(&s, &emb, 25, 7).unwrap();
        let b = cluster_spatial(&t, &emb_t, 25, 7).unwrap();
        for old in 0..n {
            prop_assert_eq!(a.assignments[old], b.assignments[perm[old]]);
        }
    }
}
