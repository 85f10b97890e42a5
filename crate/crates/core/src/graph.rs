//! Multi-faceted hierarchical spot graph.
//!
//! Three edge families are combined over the spots of one sample:
//!
//! * internal edges join every spot to the hub (centroid spot) of its spatial
//!   cluster and of its feature cluster;
//! * shortcut edges form a clique over the union of all hubs;
//! * one-hop edges join 8-connected grid neighbours.
//!
//! Internal and shortcut edges alone put every pair of spots within three
//! hops: member, own hub, other hub, member.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterKind, ClusterModel};
use crate::error::{Error, Result};
use crate::ingest::StSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    InternalSpatial,
    InternalFeature,
    Shortcut,
    OneHop,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 4] = [
        EdgeKind::InternalSpatial,
        EdgeKind::InternalFeature,
        EdgeKind::Shortcut,
        EdgeKind::OneHop,
    ];

    pub const HIERARCHY: [EdgeKind; 3] = [
        EdgeKind::InternalSpatial,
        EdgeKind::InternalFeature,
        EdgeKind::Shortcut,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::InternalSpatial => "internal_spatial",
            EdgeKind::InternalFeature => "internal_feature",
            EdgeKind::Shortcut => "shortcut",
            EdgeKind::OneHop => "one_hop",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An undirected edge stored with `src < dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn new(a: usize, b: usize, kind: EdgeKind) -> Self {
        Self {
            src: a.min(b),
            dst: a.max(b),
            kind,
        }
    }
}

/// Which edge families a graph is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GraphVariant {
    /// Both clusterings, shortcuts and one-hop edges.
    #[default]
    Hierarchical,
    /// Grid adjacency only.
    OneHop,
    /// Feature clustering + shortcuts + one-hop.
    WithoutSpatial,
    /// Spatial clustering + shortcuts + one-hop.
    WithoutFeature,
}

impl GraphVariant {
    pub fn uses(self, kind: ClusterKind) -> bool {
        matches!(
            (self, kind),
            (GraphVariant::Hierarchical, _)
                | (GraphVariant::WithoutSpatial, ClusterKind::Feature)
                | (GraphVariant::WithoutFeature, ClusterKind::Spatial)
        )
    }
}

impl fmt::Display for GraphVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphVariant::Hierarchical => "hier",
            GraphVariant::OneHop => "one_hop",
            GraphVariant::WithoutSpatial => "without_spatial",
            GraphVariant::WithoutFeature => "without_feature",
        })
    }
}

impl FromStr for GraphVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hier" | "hierarchical" => Ok(GraphVariant::Hierarchical),
            "one_hop" | "1hop" => Ok(GraphVariant::OneHop),
            "without_spatial" => Ok(GraphVariant::WithoutSpatial),
            "without_feature" => Ok(GraphVariant::WithoutFeature),
            other => Err(Error::InvalidParameter(format!(
                "unknown graph variant {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierGraph {
    pub n_nodes: usize,
    /// Sorted by `(src, dst, kind)`; unique.
    pub edges: Vec<Edge>,
    pub spatial_centroids: Option<Vec<usize>>,
    pub feature_centroids: Option<Vec<usize>>,
}

/// Member-to-hub edges of one clustering; `n - c` edges.
pub fn build_internal_edges(cm: &ClusterModel) -> Vec<Edge> {
    let kind = match cm.kind {
        ClusterKind::Spatial => EdgeKind::InternalSpatial,
        ClusterKind::Feature => EdgeKind::InternalFeature,
    };
    let mut edges: Vec<Edge> = cm
        .assignments
        .iter()
        .enumerate()
        .filter_map(|(i, &k)| {
            let hub = cm.centroid_spot[k];
            (hub != i).then(|| Edge::new(i, hub, kind))
        })
        .collect();
    edges.sort_unstable();
    edges
}

fn clique(hubs: BTreeSet<usize>) -> Vec<Edge> {
    let hubs: Vec<usize> = hubs.into_iter().collect();
    let mut edges = Vec::with_capacity(hubs.len() * hubs.len().saturating_sub(1) / 2);
    for (a, &u) in hubs.iter().enumerate() {
        for &v in &hubs[a + 1..] {
            edges.push(Edge::new(u, v, EdgeKind::Shortcut));
        }
    }
    edges
}

/// Complete graph over the deduplicated union of both clusterings' hubs.
pub fn build_shortcut_edges(spatial: &ClusterModel, feature: &ClusterModel) -> Vec<Edge> {
    clique(
        spatial
            .centroid_spot
            .iter()
            .chain(&feature.centroid_spot)
            .copied()
            .collect(),
    )
}

/// 8-connected grid adjacency, each pair stored once.
pub fn build_one_hop_edges(sample: &StSample) -> Vec<Edge> {
    let mut edges = Vec::new();
    for i in 0..sample.n_spots() {
        for j in sample.eight_neighbors(i) {
            if j > i {
                edges.push(Edge::new(i, j, EdgeKind::OneHop));
            }
        }
    }
    edges.sort_unstable();
    edges
}

/// Builds and validates the full hierarchical graph.
pub fn assemble(
    sample: &StSample,
    spatial: &ClusterModel,
    feature: &ClusterModel,
) -> Result<HierGraph> {
    assemble_variant(sample, GraphVariant::Hierarchical, Some(spatial), Some(feature))
}

/// Builds the graph for an ablation variant. Clusterings the variant does
/// not use are ignored.
pub fn assemble_variant(
    sample: &StSample,
    variant: GraphVariant,
    spatial: Option<&ClusterModel>,
    feature: Option<&ClusterModel>,
) -> Result<HierGraph> {
    let n = sample.n_spots();
    let spatial = spatial.filter(|_| variant.uses(ClusterKind::Spatial));
    let feature = feature.filter(|_| variant.uses(ClusterKind::Feature));
    for (want, cm) in [
        (ClusterKind::Spatial, spatial),
        (ClusterKind::Feature, feature),
    ] {
        match cm {
            Some(cm) => {
                if cm.kind != want || cm.n_spots() != n {
                    return Err(Error::GraphInvariant(format!(
                        "{want} clustering does not cover the sample's {n} spots"
                    )));
                }
                cm.validate()?;
            }
            None if variant.uses(want) => {
                return Err(Error::GraphInvariant(format!(
                    "variant {variant} needs a {want} clustering"
                )))
            }
            None => {}
        }
    }

    let mut edges = build_one_hop_edges(sample);
    let mut hubs = BTreeSet::new();
    for cm in [spatial, feature].into_iter().flatten() {
        edges.extend(build_internal_edges(cm));
        hubs.extend(cm.centroid_spot.iter().copied());
    }
    edges.extend(clique(hubs));
    edges.sort_unstable();
    edges.dedup();

    let graph = HierGraph {
        n_nodes: n,
        edges,
        spatial_centroids: spatial.map(|c| c.centroid_spot.clone()),
        feature_centroids: feature.map(|c| c.centroid_spot.clone()),
    };
    graph.validate()?;
    Ok(graph)
}

impl HierGraph {
    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Unique undirected node pairs over the given kinds, sorted. Pairs present
    /// under several kinds appear once.
    pub fn undirected_pairs(&self, kinds: &[EdgeKind]) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|e| kinds.contains(&e.kind))
            .map(|e| (e.src, e.dst))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Pairs used for message passing: every stored edge, kinds collapsed.
    pub fn message_pairs(&self) -> Vec<(usize, usize)> {
        self.undirected_pairs(&EdgeKind::ALL)
    }

    pub fn neighbors(&self, kinds: &[EdgeKind]) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for (u, v) in self.undirected_pairs(kinds) {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    /// Hop distances from `source` over the given kinds (`None` = unreachable).
    pub fn bfs(&self, source: usize, kinds: &[EdgeKind]) -> Vec<Option<usize>> {
        bfs_on(&self.neighbors(kinds), source)
    }

    /// Largest shortest-path length over all pairs, or `None` if some pair is
    /// disconnected.
    pub fn max_hop_distance(&self, kinds: &[EdgeKind]) -> Option<usize> {
        let adj = self.neighbors(kinds);
        let mut worst = 0;
        for s in 0..self.n_nodes {
            for d in bfs_on(&adj, s) {
                worst = worst.max(d?);
            }
        }
        Some(worst)
    }

    /// Checks the structural invariants of the edge families present.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes;
        for w in self.edges.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::GraphInvariant(format!(
                    "edges not unique and sorted: {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        for e in &self.edges {
            if e.src == e.dst {
                return Err(Error::GraphInvariant(format!("self-loop at node {}", e.src)));
            }
            if e.src > e.dst || e.dst >= n {
                return Err(Error::GraphInvariant(format!("malformed edge {e:?}")));
            }
        }

        let mut hubs = BTreeSet::new();
        for (kind, cents) in [
            (EdgeKind::InternalSpatial, &self.spatial_centroids),
            (EdgeKind::InternalFeature, &self.feature_centroids),
        ] {
            let Some(cents) = cents else {
                if self.count(kind) > 0 {
                    return Err(Error::GraphInvariant(format!(
                        "{kind} edges without a clustering"
                    )));
                }
                continue;
            };
            let is_hub: BTreeSet<usize> = cents.iter().copied().collect();
            hubs.extend(is_hub.iter().copied());
            let mut incident = vec![0usize; n];
            for e in self.edges.iter().filter(|e| e.kind == kind) {
                let (member, hub) = if is_hub.contains(&e.dst) {
                    (e.src, e.dst)
                } else {
                    (e.dst, e.src)
                };
                if !is_hub.contains(&hub) || is_hub.contains(&member) {
                    return Err(Error::GraphInvariant(format!(
                        "{kind} edge ({}, {}) must join a member to its centroid",
                        e.src, e.dst
                    )));
                }
                incident[member] += 1;
            }
            for (v, &count) in incident.iter().enumerate() {
                if !is_hub.contains(&v) && count != 1 {
                    return Err(Error::GraphInvariant(format!(
                        "non-centroid node {v} has {count} {kind} edges, expected 1"
                    )));
                }
            }
            if self.count(kind) != n - is_hub.len() {
                return Err(Error::GraphInvariant(format!(
                    "{kind} edge count {} != n - c = {}",
                    self.count(kind),
                    n - is_hub.len()
                )));
            }
        }

        let u = hubs.len();
        let expected = u * u.saturating_sub(1) / 2;
        let shortcuts = self.count(EdgeKind::Shortcut);
        if shortcuts != expected {
            return Err(Error::GraphInvariant(format!(
                "{shortcuts} shortcut edges over {u} distinct centroids, expected {expected}"
            )));
        }
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::Shortcut) {
            if !hubs.contains(&e.src) || !hubs.contains(&e.dst) {
                return Err(Error::GraphInvariant(format!(
                    "shortcut ({}, {}) touches a non-centroid node",
                    e.src, e.dst
                )));
            }
        }

        if self.spatial_centroids.is_some() || self.feature_centroids.is_some() {
            match self.max_hop_distance(&EdgeKind::HIERARCHY) {
                Some(d) if d <= 3 => {}
                Some(d) => {
                    return Err(Error::GraphInvariant(format!(
                        "diameter over internal and shortcut edges is {d} > 3"
                    )))
                }
                None => {
                    return Err(Error::GraphInvariant(
                        "internal and shortcut edges do not connect the graph".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Writes `src, dst, kind` with spot ids.
    pub fn write_tsv(&self, path: &Path, sample: &StSample) -> Result<()> {
        let mut out = String::from("src\tdst\tkind\n");
        for e in &self.edges {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                sample.spots()[e.src].spot_id,
                sample.spots()[e.dst].spot_id,
                e.kind
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn bfs_on(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have a distance");
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{EmbeddingMatrix, SpotRecord};
    use ndarray::Array2;

    fn line_sample(rows: i64, cols: i64) -> StSample {
        let mut spots = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                spots.push(SpotRecord {
                    spot_id: format!("{r}x{c}"),
                    grid_row: r,
                    grid_col: c,
                    pixel_x: 0.0,
                    pixel_y: 0.0,
                });
            }
        }
        let n = spots.len();
        StSample::new("g", spots, vec!["a".into()], Array2::zeros((n, 1))).unwrap()
    }

    fn model(kind: ClusterKind, assignments: Vec<usize>, hubs: Vec<usize>) -> ClusterModel {
        ClusterModel {
            kind,
            assignments,
            centroid_spot: hubs,
            target_cluster_size: 100,
            degenerate: false,
        }
    }

    #[test]
    fn star_for_single_cluster() {
        let cm = model(ClusterKind::Spatial, vec![0; 5], vec![2]);
        let edges = build_internal_edges(&cm);
        assert_eq!(edges.len(), 4);
        assert!(edges.iter().all(|e| e.src == 2 || e.dst == 2));
    }

    #[test]
    fn singleton_clusters_have_no_internal_edges() {
        let cm = model(ClusterKind::Feature, vec![0, 1, 2], vec![0, 1, 2]);
        assert!(build_internal_edges(&cm).is_empty());
    }

    #[test]
    fn shortcut_counts() {
        let s = model(ClusterKind::Spatial, (0..10).map(|i| i / 2).collect(), vec![0, 2, 4, 6, 8]);
        let f_distinct = model(ClusterKind::Feature, (0..10).map(|i| i / 2).collect(), vec![1, 3, 5, 7, 9]);
        assert_eq!(build_shortcut_edges(&s, &f_distinct).len(), 45);
        let f_same = model(ClusterKind::Feature, (0..10).map(|i| i / 2).collect(), vec![0, 2, 4, 6, 8]);
        assert_eq!(build_shortcut_edges(&s, &f_same).len(), 10);
        let s1 = model(ClusterKind::Spatial, vec![0, 0], vec![0]);
        let f1 = model(ClusterKind::Feature, vec![0, 0], vec![1]);
        assert_eq!(build_shortcut_edges(&s1, &f1).len(), 1);
    }

    #[test]
    fn one_hop_counts() {
        // Brute force over all pairs of the 3x3 grid.
        let s = line_sample(3, 3);
        let mut brute = 0;
        for i in 0..9 {
            for j in i + 1..9 {
                let (a, b) = (&s.spots()[i], &s.spots()[j]);
                if a.grid_row.abs_diff(b.grid_row) <= 1 && a.grid_col.abs_diff(b.grid_col) <= 1 {
                    brute += 1;
                }
            }
        }
        assert_eq!(brute, 20);
        assert_eq!(build_one_hop_edges(&s).len(), 20);
        assert_eq!(build_one_hop_edges(&line_sample(1, 2)).len(), 1);
    }

    #[test]
    fn single_node_graph_is_empty_and_valid() {
        let s = line_sample(1, 1);
        let emb = EmbeddingMatrix::new("g", Array2::zeros((1, 2))).unwrap();
        let sp = crate::clustering::cluster_spatial(&s, &emb, 100, 1).unwrap();
        let fe = crate::clustering::cluster_feature(&emb, 100, 1).unwrap();
        let g = assemble(&s, &sp, &fe).unwrap();
        assert!(g.edges.is_empty());
        assert_eq!(g.max_hop_distance(&EdgeKind::HIERARCHY), Some(0));
    }

    #[test]
    fn validation_names_broken_invariant() {
        let s = line_sample(1, 4);
        let sp = model(ClusterKind::Spatial, vec![0, 0, 1, 1], vec![0, 2]);
        let fe = model(ClusterKind::Feature, vec![0, 0, 0, 0], vec![1]);
        let mut g = assemble(&s, &sp, &fe).unwrap();
        g.edges.retain(|e| e.kind != EdgeKind::Shortcut || e.src != 0);
        let err = g.validate().unwrap_err().to_string();
        assert!(err.contains("shortcut"), "{err}");
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("hier".parse::<GraphVariant>().unwrap(), GraphVariant::Hierarchical);
        assert_eq!("one_hop".parse::<GraphVariant>().unwrap(), GraphVariant::OneHop);
        assert!("full".parse::<GraphVariant>().is_err());
    }
}
