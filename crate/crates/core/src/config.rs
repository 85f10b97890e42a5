//! Flat run configuration stored as TOML key/value pairs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::DEFAULT_CLUSTER_SIZE;
use crate::cv::DEFAULT_FOLDS;
use crate::error::{Error, Result};
use crate::gnn::GatConfig;
use crate::graph::GraphVariant;
use crate::smoothing::{SmoothingMethod, SpcsParams};
use crate::train::{OptimizerKind, TrainConfig, DEFAULT_SEED};

pub const SNAPSHOT_NAME: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding `<id>.spots.tsv`, `<id>.expr.tsv` and `<id>.emb.tsv`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,

    pub smoothing: SmoothingMethod,
    pub tau_s: u32,
    pub tau_p: u32,
    pub alpha: f64,
    pub beta: f64,
    pub pca_dim: usize,

    pub cluster_size: usize,
    pub graph: GraphVariant,

    pub heads: usize,
    pub head_dim: usize,
    pub n_layers: usize,
    pub edge_dropout: f64,

    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub replicates: usize,

    /// Run cross-validation in `pipeline` when there are enough samples.
    pub cross_validate: bool,
    pub folds: usize,
    /// Genes exported as heatmaps; empty means the first gene of the panel.
    pub heatmap_genes: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spcs = SpcsParams::default();
        let gat = GatConfig::default();
        let train = TrainConfig::default();
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            seed: DEFAULT_SEED,
            smoothing: SmoothingMethod::Spcs,
            tau_s: spcs.tau_s,
            tau_p: spcs.tau_p,
            alpha: spcs.alpha,
            beta: spcs.beta,
            pca_dim: spcs.pca_dim,
            cluster_size: DEFAULT_CLUSTER_SIZE,
            graph: GraphVariant::default(),
            heads: gat.heads,
            head_dim: gat.head_dim,
            n_layers: gat.n_layers,
            edge_dropout: gat.edge_dropout,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            optimizer: train.optimizer,
            replicates: train.replicate_count,
            cross_validate: true,
            folds: DEFAULT_FOLDS,
            heatmap_genes: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serialises")
    }

    /// Writes the fully resolved configuration to `dir/config.resolved.toml`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(SNAPSHOT_NAME);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn spcs_params(&self) -> SpcsParams {
        SpcsParams {
            tau_s: self.tau_s,
            tau_p: self.tau_p,
            alpha: self.alpha,
            beta: self.beta,
            pca_dim: self.pca_dim,
        }
    }

    pub fn gat_config(&self, in_dim: usize, out_dim: usize) -> GatConfig {
        GatConfig {
            in_dim,
            out_dim,
            heads: self.heads,
            head_dim: self.head_dim,
            n_layers: self.n_layers,
            edge_dropout: self.edge_dropout,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: self.seed,
            replicate_count: self.replicates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spcs_params().validate()?;
        self.gat_config(1, 1).validate()?;
        self.train_config().validate()?;
        if self.cluster_size == 0 {
            return Err(Error::InvalidParameter("cluster_size must be >= 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidParameter("folds must be >= 2".into()));
        }
        Ok(())
    }
}
