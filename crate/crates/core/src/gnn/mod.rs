//! Graph attention network over spot graphs.
//!
//! Four attention layers: the first three use 8 heads of width 32 whose
//! outputs are concatenated, followed by ELU and layer normalisation; the last
//! layer has a single head producing one value per gene. Gradients are
//! computed by hand-written reverse passes.

mod checkpoint;
mod layer;
mod model;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use layer::{gat_layer_forward, GatLayerParams, LayerCache, LayerGrads};
pub use model::{gat_forward, ForwardPass, GatConfig, GatGrads, GatModel, Mode};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// In-neighbourhoods in CSR form: `sources(i)` lists every `j` with a message
/// `j -> i`, including the self-loop, in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl Adjacency {
    /// Expands undirected pairs to both directions and adds a self-loop on
    /// every node. Duplicate pairs are ignored.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut lists: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(u, v) in pairs {
            if u != v {
                lists[u].push(v);
                lists[v].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut sources = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            sources.extend(l);
            offsets.push(sources.len());
        }
        Self { offsets, sources }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_messages(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self, i: usize) -> &[usize] {
        &self.sources[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n_nodes();
        let mut pairs = Vec::new();
        for i in 0..n {
            for &j in self.sources(i) {
                if j < i {
                    pairs.push((perm[j], perm[i]));
                }
            }
        }
        Self::from_pairs(n, &pairs)
    }
}

/// Keeps each undirected pair independently with probability `1 - p`.
pub fn drop_edges(pairs: &[(usize, usize)], p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    if p <= 0.0 {
        return pairs.to_vec();
    }
    pairs
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() >= p)
        .collect()
}

/// Edge-dropout RNG for one forward pass.
pub fn dropout_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean squared error over all entries and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(pred.dim(), target.dim(), "prediction/target shape mismatch");
    let count = pred.len().max(1) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    (loss, diff * (2.0 / count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mse_examples() {
        let t = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(mse_loss(&t, &t).0, 0.0);
        let (loss, grad) = mse_loss(&(&t + 1.0), &t);
        assert_eq!(loss, 1.0);
        assert!(grad.iter().all(|&g| g == 0.5));
    }

    #[test]
    fn adjacency_adds_self_loops_and_dedups() {
        let adj = Adjacency::from_pairs(3, &[(0, 1), (1, 0), (1, 2)]);
        assert_eq!(adj.sources(0), &[0, 1]);
        assert_eq!(adj.sources(1), &[0, 1, 2]);
        assert_eq!(adj.sources(2), &[1, 2]);
        assert_eq!(adj.n_messages(), 7);
    }

    #[test]
    fn zero_dropout_keeps_everything() {
        let pairs = vec![(0, 1), (2, 3), (1, 3)];
        let mut rng = dropout_rng(9);
        assert_eq!(drop_edges(&pairs, 0.0, &mut rng), pairs);
    }
}
