use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{gat_layer_backward, gat_layer_forward, GatLayerParams, LayerCache, LayerGrads};
use super::{drop_edges, dropout_rng, mse_loss, Adjacency};
use crate::error::{Error, Result};
use crate::graph::HierGraph;
use crate::ingest::EmbeddingMatrix;

/// Architecture of the attention network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Heads on every layer but the last, which has one.
    pub heads: usize,
    pub head_dim: usize,
    pub n_layers: usize,
    pub edge_dropout: f64,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            in_dim: 256,
            out_dim: 250,
            heads: 8,
            head_dim: 32,
            n_layers: 4,
            edge_dropout: 0.2,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.heads == 0 || self.head_dim == 0 {
            return Err(Error::InvalidParameter(
                "GAT dimensions and head counts must be positive".into(),
            ));
        }
        if self.n_layers == 0 {
            return Err(Error::InvalidParameter("GAT needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&self.edge_dropout) {
            return Err(Error::InvalidParameter(format!(
                "edge dropout must be in [0, 1), got {}",
                self.edge_dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Edge dropout active.
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatModel {
    pub config: GatConfig,
    pub layers: Vec<GatLayerParams>,
}

/// Output of a forward pass plus everything the reverse pass needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: Array2<f64>,
    pub caches: Vec<LayerCache>,
    pub adjacency: Adjacency,
    /// Undirected pairs that survived edge dropout.
    pub kept_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatGrads {
    pub layers: Vec<LayerGrads>,
}

impl GatGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }
}

impl GatModel {
    pub fn new(config: GatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.n_layers);
        let mut in_dim = config.in_dim;
        for l in 0..config.n_layers {
            let last = l + 1 == config.n_layers;
            let layer = if last {
                GatLayerParams::init(in_dim, 1, config.out_dim, true, &mut rng)
            } else {
                GatLayerParams::init(in_dim, config.heads, config.head_dim, false, &mut rng)
            };
            in_dim = layer.out_dim();
            layers.push(layer);
        }
        Ok(Self { config, layers })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.n_layers {
            return Err(Error::Dimension(format!(
                "{} layers, config says {}",
                self.layers.len(),
                self.config.n_layers
            )));
        }
        let mut in_dim = self.config.in_dim;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            let last = l + 1 == self.layers.len();
            if layer.in_dim() != in_dim || layer.final_layer != last {
                return Err(Error::Dimension(format!("layer {l} does not compose")));
            }
            in_dim = layer.out_dim();
        }
        if in_dim != self.config.out_dim {
            return Err(Error::Dimension(format!(
                "model output width {in_dim} != {}",
                self.config.out_dim
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(GatLayerParams::n_params).sum()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    /// Sets the output layer's bias, typically to the per-gene target mean.
    pub fn set_output_bias(&mut self, bias: &Array1<f64>) -> Result<()> {
        let last = self.layers.last_mut().expect("at least one layer");
        if bias.len() != last.bias.len() {
            return Err(Error::Dimension(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                last.bias.len()
            )));
        }
        last.bias.assign(bias);
        Ok(())
    }

    /// Runs all layers over a fixed adjacency.
    pub fn forward_adjacency(&self, x: &Array2<f64>, adjacency: Adjacency) -> Result<ForwardPass> {
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = caches.last().map_or(x, |c| &c.output);
            let cache = gat_layer_forward(input, &adjacency, layer)?;
            caches.push(cache);
        }
        Ok(ForwardPass {
            output: caches.last().expect("at least one layer").output.clone(),
            caches,
            adjacency,
            kept_pairs: Vec::new(),
        })
    }

    /// Forward pass over undirected `pairs`. In train mode each pair is dropped
    /// with probability `edge_dropout`, drawn from `seed`, before expansion.
    pub fn forward(
        &self,
        pairs: &[(usize, usize)],
        x: &Array2<f64>,
        mode: Mode,
        seed: u64,
    ) -> Result<ForwardPass> {
        let kept = match mode {
            Mode::Train => drop_edges(pairs, self.config.edge_dropout, &mut dropout_rng(seed)),
            Mode::Eval => pairs.to_vec(),
        };
        let adjacency = Adjacency::from_pairs(x.nrows(), &kept);
        let mut pass = self.forward_adjacency(x, adjacency)?;
        pass.kept_pairs = kept;
        Ok(pass)
    }

    /// Reverse pass of [`GatModel::forward`] for an upstream gradient `d_out`.
    pub fn backward(&self, pass: &ForwardPass, d_out: &Array2<f64>) -> GatGrads {
        let mut grad = d_out.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, (layer, cache)) in self.layers.iter().zip(&pass.caches).enumerate().rev() {
            let (g, d_in) = gat_layer_backward(cache, &pass.adjacency, layer, &grad, l > 0);
            layers.push(g);
            if let Some(d) = d_in {
                grad = d;
            }
        }
        layers.reverse();
        GatGrads { layers }
    }

    /// MSE loss and exact parameter gradients at the dropout mask drawn from `seed`.
    pub fn loss_and_grads(
        &self,
        pairs: &[(usize, usize)],
        x: &Array2<f64>,
        target: &Array2<f64>,
        mode: Mode,
        seed: u64,
    ) -> Result<(f64, GatGrads)> {
        let pass = self.forward(pairs, x, mode, seed)?;
        if pass.output.dim() != target.dim() {
            return Err(Error::Dimension(format!(
                "prediction {:?} vs target {:?}",
                pass.output.dim(),
                target.dim()
            )));
        }
        let (loss, d_out) = mse_loss(&pass.output, target);
        Ok((loss, self.backward(&pass, &d_out)))
    }
}

/// Predictions for every spot of a graph.
pub fn gat_forward(
    model: &GatModel,
    graph: &HierGraph,
    x: &EmbeddingMatrix,
    mode: Mode,
    seed: u64,
) -> Result<Array2<f64>> {
    if x.dim() != model.config.in_dim {
        return Err(Error::Dimension(format!(
            "model expects {}-dimensional embeddings, got {}",
            model.config.in_dim,
            x.dim()
        )));
    }
    if x.n_rows() != graph.n_nodes {
        return Err(Error::Dimension(format!(
            "{} embedding rows for {} graph nodes",
            x.n_rows(),
            graph.n_nodes
        )));
    }
    Ok(model
        .forward(&graph.message_pairs(), x.data(), mode, seed)?
        .output)
}
