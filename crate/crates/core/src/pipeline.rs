//! Per-sample preparation (smoothing, clustering, graph) and the full
//! train/evaluate/export chain driven by a [`RunConfig`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::{cluster_feature, cluster_spatial, write_assignments, ClusterModel};
use crate::config::RunConfig;
use crate::cv::{cross_validate, CvReport};
use crate::error::{Error, Result};
use crate::gnn::{save_checkpoint, GatModel};
use crate::graph::{assemble_variant, GraphVariant, HierGraph};
use crate::heatmap::heatmap_export;
use crate::ingest::{discover_samples, load_embeddings, load_sample, write_expression, EmbeddingMatrix, StSample};
use crate::metrics::{mean_report, MetricsReport};
use crate::smoothing::{prepare_targets, spcs_smooth, SmoothingMetadata, SmoothingMethod, SpcsParams};
use crate::train::{evaluate, predict, target_means, train, GraphSample, TrainConfig};

/// Smoothed targets (logCPM space) plus the sidecar describing them.
pub fn smooth_sample(
    sample: &StSample,
    method: SmoothingMethod,
    params: &SpcsParams,
    seed: u64,
) -> Result<(Array2<f64>, SmoothingMetadata)> {
    let (values, zero_variance_spots) = match method {
        SmoothingMethod::Spcs => {
            let out = spcs_smooth(sample, params)?;
            (out.smoothed, out.zero_variance_spots)
        }
        other => (prepare_targets(sample, other, params)?, 0),
    };
    let meta = SmoothingMetadata {
        sample_id: sample.sample_id().to_string(),
        method,
        spcs: (method == SmoothingMethod::Spcs).then_some(*params),
        seed,
        n_spots: sample.n_spots(),
        n_genes: sample.n_genes(),
        zero_variance_spots,
    };
    Ok((values, meta))
}

/// Everything derived from one sample before training.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub sample: StSample,
    pub embeddings: EmbeddingMatrix,
    pub targets: Array2<f64>,
    pub smoothing: SmoothingMetadata,
    pub spatial: ClusterModel,
    pub feature: ClusterModel,
    pub graph: HierGraph,
}

impl PreparedSample {
    pub fn graph_sample(&self) -> GraphSample {
        GraphSample {
            sample_id: self.sample.sample_id().to_string(),
            pairs: self.graph.message_pairs(),
            features: self.embeddings.data().clone(),
            targets: self.targets.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PrepareOptions {
    pub method: SmoothingMethod,
    pub spcs: SpcsParams,
    pub cluster_size: usize,
    pub variant: GraphVariant,
    pub seed: u64,
}

impl From<&RunConfig> for PrepareOptions {
    fn from(c: &RunConfig) -> Self {
        Self {
            method: c.smoothing,
            spcs: c.spcs_params(),
            cluster_size: c.cluster_size,
            variant: c.graph,
            seed: c.seed,
        }
    }
}

pub fn prepare_sample(sample: StSample, embeddings: EmbeddingMatrix, opts: &PrepareOptions) -> Result<PreparedSample> {
    if embeddings.n_rows() != sample.n_spots() {
        return Err(Error::RowCountMismatch {
            what: format!("embeddings of {}", sample.sample_id()),
            expected: sample.n_spots(),
            found: embeddings.n_rows(),
        });
    }
    let (targets, smoothing) = smooth_sample(&sample, opts.method, &opts.spcs, opts.seed)?;
    let spatial = cluster_spatial(&sample, &embeddings, opts.cluster_size, opts.seed)?;
    let feature = cluster_feature(&embeddings, opts.cluster_size, opts.seed)?;
    let graph = assemble_variant(&sample, opts.variant, Some(&spatial), Some(&feature))?;
    Ok(PreparedSample {
        sample,
        embeddings,
        targets,
        smoothing,
        spatial,
        feature,
        graph,
    })
}

/// Loads every sample in `dir`.
pub fn load_dataset(dir: &Path) -> Result<Vec<(StSample, EmbeddingMatrix)>> {
    let paths = discover_samples(dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no *.spots.tsv files in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let sample = load_sample(&p.spots, &p.expr)?;
            let emb = load_embeddings(&p.embeddings, &sample)?;
            Ok((sample, emb))
        })
        .collect()
}

/// Checks that all samples share one gene panel and embedding width.
pub fn check_consistent(prepared: &[PreparedSample]) -> Result<()> {
    let Some(first) = prepared.first() else {
        return Ok(());
    };
    for p in &prepared[1..] {
        if p.sample.genes() != first.sample.genes() {
            return Err(Error::Dimension(format!(
                "sample {} has a different gene panel from {}",
                p.sample.sample_id(),
                first.sample.sample_id()
            )));
        }
        if p.embeddings.dim() != first.embeddings.dim() {
            return Err(Error::Dimension(format!(
                "sample {} has {}-dimensional embeddings, {} has {}",
                p.sample.sample_id(),
                p.embeddings.dim(),
                first.sample.sample_id(),
                first.embeddings.dim()
            )));
        }
    }
    Ok(())
}

pub fn prepare_all(data: Vec<(StSample, EmbeddingMatrix)>, opts: &PrepareOptions) -> Result<Vec<PreparedSample>> {
    let prepared: Vec<PreparedSample> = data
        .into_par_iter()
        .map(|(s, e)| prepare_sample(s, e, opts))
        .collect::<Result<_>>()?;
    check_consistent(&prepared)?;
    Ok(prepared)
}

/// Builds the initial model for a training set: architecture from `config`,
/// output bias at the per-gene target mean.
pub fn initial_model(config: &RunConfig, samples: &[GraphSample]) -> Result<GatModel> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidParameter("no training samples".into()))?;
    let gat = config.gat_config(first.features.ncols(), first.targets.ncols());
    let mut model = GatModel::new(gat, config.seed)?;
    if let Some(mean) = target_means(samples) {
        model.set_output_bias(&mean)?;
    }
    Ok(model)
}

pub fn write_metrics_tsv(path: &Path, rows: &[(String, MetricsReport)]) -> Result<()> {
    let mut out = String::from("sample_id\tmse\tmae\tpcc\texcluded_genes\n");
    for (id, r) in rows {
        let _ = writeln!(out, "{id}\t{}\t{}\t{}\t{}", r.mse, r.mae, r.pcc, r.excluded_genes);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_cv_tsv(path: &Path, report: &CvReport) -> Result<()> {
    let mut out = String::from("fold\tsample_id\tmse\tmae\tpcc\n");
    for f in &report.folds {
        for s in &f.test {
            let m = &s.metrics;
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", f.fold, s.sample_id, m.mse, m.mae, m.pcc);
        }
    }
    let m = &report.mean;
    let _ = writeln!(out, "mean\t-\t{}\t{}\t{}", m.mse, m.mae, m.pcc);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut out = String::from("epoch\tloss\n");
    for (e, l) in curve.iter().enumerate() {
        let _ = writeln!(out, "{e}\t{l}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct EvalJson<'a> {
    samples: Vec<SampleMetrics<'a>>,
    mean: MetricsReport,
}

#[derive(Debug, Serialize)]
struct SampleMetrics<'a> {
    sample_id: &'a str,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

/// Writes `metrics.tsv` and `metrics.json` for per-sample reports; returns
/// their mean.
pub fn write_eval_reports(dir: &Path, rows: &[(String, MetricsReport)]) -> Result<MetricsReport> {
    let reports: Vec<MetricsReport> = rows.iter().map(|(_, r)| r.clone()).collect();
    let mean = mean_report(&reports).ok_or_else(|| Error::InvalidParameter("nothing evaluated".into()))?;
    write_metrics_tsv(&dir.join("metrics.tsv"), rows)?;
    let json = EvalJson {
        samples: rows
            .iter()
            .map(|(id, m)| SampleMetrics { sample_id: id, metrics: m })
            .collect(),
        mean: mean.clone(),
    };
    write_json(&dir.join("metrics.json"), &json)?;
    Ok(mean)
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub n_samples: usize,
    pub train_metrics: MetricsReport,
    pub cv: Option<CvReport>,
    pub checkpoint: PathBuf,
    pub best_replicate: usize,
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn safe_name(gene: &str) -> String {
    gene.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Smooths, clusters and builds graphs for every sample in `data_dir`, trains
/// on all of them, evaluates, optionally cross-validates, and exports
/// heatmaps. All artifacts go under `out_dir` next to a resolved-config
/// snapshot; reruns with the same snapshot reproduce them byte for byte.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineSummary> {
    config.validate()?;
    let out = config.out_dir.clone();
    mkdir(&out)?;
    config.write_snapshot(&out)?;

    let data = load_dataset(&config.data_dir)?;
    let prepared = prepare_all(data, &PrepareOptions::from(config))?;

    let sample_dir = out.join("samples");
    mkdir(&sample_dir)?;
    for p in &prepared {
        let id = p.sample.sample_id();
        write_expression(&sample_dir.join(format!("{id}.smoothed.tsv")), &p.sample, &p.targets)?;
        write_json(&sample_dir.join(format!("{id}.smoothing.json")), &p.smoothing)?;
        write_assignments(&sample_dir.join(format!("{id}.clusters.tsv")), &p.sample, &p.spatial, &p.feature)?;
        p.graph.write_tsv(&sample_dir.join(format!("{id}.edges.tsv")), &p.sample)?;
    }

    let samples: Vec<GraphSample> = prepared.iter().map(PreparedSample::graph_sample).collect();
    let train_config: TrainConfig = config.train_config();
    let init = initial_model(config, &samples)?;
    let outcome = train(&init, &samples, &[], &train_config)?;
    let checkpoint = out.join("model.ckpt");
    save_checkpoint(&checkpoint, &outcome.model)?;
    write_loss_curve(&out.join("loss_curve.tsv"), &outcome.loss_curve)?;

    let reports = evaluate(&outcome.model, &samples)?;
    let rows: Vec<(String, MetricsReport)> = samples
        .iter()
        .map(|s| s.sample_id.clone())
        .zip(reports)
        .collect();
    let train_metrics = write_eval_reports(&out, &rows)?;

    let cv = if config.cross_validate && samples.len() >= config.folds {
        let gat = init.config;
        let report = cross_validate(&samples, config.folds, gat, &train_config)?;
        write_cv_tsv(&out.join("cv.tsv"), &report)?;
        write_json(&out.join("cv.json"), &report)?;
        Some(report)
    } else {
        if config.cross_validate {
            log::warn!(
                "skipping cross-validation: {} samples for {} folds",
                samples.len(),
                config.folds
            );
        }
        None
    };

    let heat_dir = out.join("heatmaps");
    mkdir(&heat_dir)?;
    for (p, s) in prepared.iter().zip(&samples) {
        let genes: Vec<String> = if config.heatmap_genes.is_empty() {
            p.sample.genes().iter().take(1).cloned().collect()
        } else {
            config.heatmap_genes.clone()
        };
        let pred = predict(&outcome.model, s)?;
        for gene in &genes {
            let stem = heat_dir.join(format!("{}.{}", p.sample.sample_id(), safe_name(gene)));
            heatmap_export(&p.sample, gene, &pred, &p.targets, &stem)?;
        }
    }

    Ok(PipelineSummary {
        out_dir: out,
        n_samples: samples.len(),
        train_metrics,
        cv,
        checkpoint,
        best_replicate: outcome.best_replicate,
    })
}
