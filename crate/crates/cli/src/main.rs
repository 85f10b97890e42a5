use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use stgraph::clustering::{cluster_feature, cluster_spatial, write_assignments};
use stgraph::config::RunConfig;
use stgraph::cv::cross_validate;
use stgraph::gnn::{load_checkpoint, save_checkpoint};
use stgraph::graph::{assemble_variant, GraphVariant};
use stgraph::heatmap::heatmap_export;
use stgraph::ingest::{load_embeddings, load_sample, save_sample, write_expression, StSample};
use stgraph::pipeline::{
    initial_model, load_dataset, prepare_all, prepare_sample, run_pipeline, smooth_sample,
    write_cv_tsv, write_eval_reports, write_json, write_loss_curve, PrepareOptions,
};
use stgraph::smoothing::SmoothingMethod;
use stgraph::synth::{generate_cohort, write_labels, SynthSpec};
use stgraph::train::{evaluate, predict, train, GraphSample, OptimizerKind};
use stgraph::Error;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ncore library: stgraph ",
    env!("CARGO_PKG_VERSION"),
    "\ncheckpoint format: stgraph-gat-checkpoint 1",
    "\ndefault seed: 3927"
);

/// Expression prediction from spot embeddings over a hierarchical spot graph.
#[derive(Parser, Debug)]
#[command(name = "stgraph", version, long_version = LONG_VERSION)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a sample and optionally copy it in canonical form.
    Ingest {
        #[command(flatten)]
        input: SampleInput,
        /// Directory to write the validated sample to.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smooth a sample's expression (values are written in logCPM space).
    Smooth {
        #[command(flatten)]
        input: SampleInput,
        #[command(flatten)]
        run: RunArgs,
        /// Output matrix; a `.meta.json` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Spatial and feature clustering of one sample.
    Cluster {
        #[command(flatten)]
        input: SampleInput,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the spot graph of one sample and write its edge list.
    BuildGraph {
        #[command(flatten)]
        input: SampleInput,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on every sample of the data directory.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a checkpoint on every sample of the data directory.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Slide-level cross-validation.
    Cv {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Export truth/prediction heatmaps of one gene for one sample.
    Heatmap {
        #[command(flatten)]
        input: SampleInput,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        gene: String,
        /// Output path without extension; `.tsv` and `.png` are appended.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic samples with planted regions.
    Synth(SynthArgs),
    /// Smooth, cluster, build graphs, train, evaluate, cross-validate and export.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Debug)]
struct SampleInput {
    #[arg(long)]
    spots: PathBuf,
    #[arg(long)]
    expr: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

impl SampleInput {
    fn load(&self) -> Result<StSample> {
        Ok(load_sample(&self.spots, &self.expr)?)
    }

    fn load_with_embeddings(&self) -> Result<(StSample, stgraph::ingest::EmbeddingMatrix)> {
        let sample = self.load()?;
        let path = self
            .embeddings
            .as_ref()
            .context("--embeddings is required for this command")?;
        let emb = load_embeddings(path, &sample)?;
        Ok((sample, emb))
    }
}

/// Options shared with the configuration file; flags override file values.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// none, 8n or spcs.
    #[arg(long)]
    method: Option<SmoothingMethod>,
    #[arg(long)]
    tau_s: Option<u32>,
    #[arg(long)]
    tau_p: Option<u32>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    pca_dim: Option<usize>,
    /// Target cluster size for both clusterings.
    #[arg(long)]
    size: Option<usize>,
    /// hier, one_hop, without_spatial or without_feature.
    #[arg(long)]
    graph: Option<GraphVariant>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long)]
    edge_dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// adam or sgd.
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Skip cross-validation in `pipeline`.
    #[arg(long)]
    no_cv: bool,
    /// Gene to export as a heatmap in `pipeline` (repeatable).
    #[arg(long = "heatmap-gene")]
    heatmap_genes: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { c.$target = v; })*
            };
        }
        set!(
            data_dir => data_dir, out_dir => out_dir, seed => seed, method => smoothing,
            tau_s => tau_s, tau_p => tau_p, alpha => alpha, beta => beta, pca_dim => pca_dim,
            size => cluster_size, graph => graph, heads => heads, head_dim => head_dim,
            edge_dropout => edge_dropout, epochs => epochs, lr => learning_rate,
            optimizer => optimizer, replicates => replicates, folds => folds,
        );
        if self.no_cv {
            c.cross_validate = false;
        }
        if !self.heatmap_genes.is_empty() {
            c.heatmap_genes = self.heatmap_genes.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    rows: usize,
    #[arg(long, default_value_t = 20)]
    cols: usize,
    #[arg(long, default_value_t = 4)]
    regions: usize,
    #[arg(long, default_value_t = 5)]
    genes_per_region: usize,
    #[arg(long, default_value_t = 16)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 0.0)]
    embedding_noise: f64,
    /// Disconnected territories per region (region 0 always has at least two).
    #[arg(long, default_value_t = 1)]
    islands_per_region: usize,
    #[arg(long, default_value_t = 3927)]
    seed: u64,
    /// Number of samples sharing prototypes and gene signatures.
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

fn prepared_graph_samples(config: &RunConfig) -> Result<Vec<GraphSample>> {
    let data = load_dataset(&config.data_dir)?;
    let prepared = prepare_all(data, &PrepareOptions::from(config))?;
    Ok(prepared.iter().map(|p| p.graph_sample()).collect())
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, out } => {
            let sample = input.load()?;
            let emb = match &input.embeddings {
                Some(p) => Some(load_embeddings(p, &sample)?),
                None => None,
            };
            println!(
                "{}: {} spots, {} genes{}",
                sample.sample_id(),
                sample.n_spots(),
                sample.n_genes(),
                emb.as_ref()
                    .map(|e| format!(", {}-dimensional embeddings", e.dim()))
                    .unwrap_or_default()
            );
            if let Some(dir) = out {
                mkdir(&dir)?;
                save_sample(&dir, &sample, emb.as_ref())?;
            }
        }
        Command::Smooth { input, run, out } => {
            let config = run.resolve()?;
            let sample = input.load()?;
            let (values, meta) = smooth_sample(&sample, config.smoothing, &config.spcs_params(), config.seed)?;
            write_expression(&out, &sample, &values)?;
            let mut meta_path = out.clone().into_os_string();
            meta_path.push(".meta.json");
            write_json(Path::new(&meta_path), &meta)?;
        }
        Command::Cluster { input, run, out } => {
            let config = run.resolve()?;
            let (sample, emb) = input.load_with_embeddings()?;
            let spatial = cluster_spatial(&sample, &emb, config.cluster_size, config.seed)?;
            let feature = cluster_feature(&emb, config.cluster_size, config.seed)?;
            write_assignments(&out, &sample, &spatial, &feature)?;
            println!(
                "{} spatial and {} feature clusters",
                spatial.n_clusters(),
                feature.n_clusters()
            );
        }
        Command::BuildGraph { input, run, out } => {
            let config = run.resolve()?;
            let (sample, emb) = input.load_with_embeddings()?;
            let spatial = cluster_spatial(&sample, &emb, config.cluster_size, config.seed)?;
            let feature = cluster_feature(&emb, config.cluster_size, config.seed)?;
            let graph = assemble_variant(&sample, config.graph, Some(&spatial), Some(&feature))?;
            graph.write_tsv(&out, &sample)?;
            println!("{} nodes, {} edges", graph.n_nodes, graph.edges.len());
        }
        Command::Train { run } => {
            let config = run.resolve()?;
            mkdir(&config.out_dir)?;
            config.write_snapshot(&config.out_dir)?;
            let samples = prepared_graph_samples(&config)?;
            let init = initial_model(&config, &samples)?;
            let outcome = train(&init, &samples, &[], &config.train_config())?;
            save_checkpoint(&config.out_dir.join("model.ckpt"), &outcome.model)?;
            write_loss_curve(&config.out_dir.join("loss_curve.tsv"), &outcome.loss_curve)?;
            println!(
                "best replicate {} final loss {}",
                outcome.best_replicate,
                outcome.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Eval { run, checkpoint } => {
            let config = run.resolve()?;
            mkdir(&config.out_dir)?;
            config.write_snapshot(&config.out_dir)?;
            let model = load_checkpoint(&checkpoint)?;
            let samples = prepared_graph_samples(&config)?;
            let reports = evaluate(&model, &samples)?;
            let rows: Vec<_> = samples.iter().map(|s| s.sample_id.clone()).zip(reports).collect();
            let mean = write_eval_reports(&config.out_dir, &rows)?;
            println!("mse {} mae {} pcc {}", mean.mse, mean.mae, mean.pcc);
        }
        Command::Cv { run } => {
            let config = run.resolve()?;
            mkdir(&config.out_dir)?;
            config.write_snapshot(&config.out_dir)?;
            let samples = prepared_graph_samples(&config)?;
            let gat = initial_model(&config, &samples)?.config;
            let report = cross_validate(&samples, config.folds, gat, &config.train_config())?;
            write_cv_tsv(&config.out_dir.join("cv.tsv"), &report)?;
            write_json(&config.out_dir.join("cv.json"), &report)?;
            let m = &report.mean;
            println!("mse {} mae {} pcc {}", m.mse, m.mae, m.pcc);
        }
        Command::Heatmap {
            input,
            run,
            checkpoint,
            gene,
            out,
        } => {
            let config = run.resolve()?;
            let (sample, emb) = input.load_with_embeddings()?;
            let model = load_checkpoint(&checkpoint)?;
            let prepared = prepare_sample(sample, emb, &PrepareOptions::from(&config))?;
            let pred = predict(&model, &prepared.graph_sample())?;
            let files = heatmap_export(&prepared.sample, &gene, &pred, &prepared.targets, &out)?;
            match files.pcc {
                Some(r) => println!("{gene}: pcc {r}"),
                None => println!("{gene}: pcc undefined (constant values)"),
            }
        }
        Command::Synth(a) => {
            let spec = SynthSpec {
                grid_rows: a.rows,
                grid_cols: a.cols,
                n_regions: a.regions,
                genes_per_region: a.genes_per_region,
                embedding_dim: a.embedding_dim,
                noise_sigma: a.noise,
                dropout_rate: a.dropout,
                embedding_noise: a.embedding_noise,
                islands_per_region: a.islands_per_region,
                seed: a.seed,
            };
            mkdir(&a.out)?;
            for s in generate_cohort(&spec, a.samples.max(1))? {
                save_sample(&a.out, &s.sample, Some(&s.embeddings))?;
                let labels = a.out.join(format!("{}.labels.tsv", s.sample.sample_id()));
                write_labels(&labels, &s.sample, &s.labels)?;
            }
            write_json(&a.out.join("synth.json"), &spec)?;
        }
        Command::Pipeline { run } => {
            let config = run.resolve()?;
            let summary = run_pipeline(&config)?;
            let m = &summary.train_metrics;
            println!(
                "{} samples; training mse {} mae {} pcc {}",
                summary.n_samples, m.mse, m.mae, m.pcc
            );
            if let Some(cv) = &summary.cv {
                println!("cross-validation mse {} mae {} pcc {}", cv.mean.mse, cv.mean.mae, cv.mean.pcc);
            }
        }
    }
    Ok(())
}

/// 1 for invalid input or parameters, 3 for training divergence, 4 for I/O.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Diverged { .. }) => 3,
        Some(Error::Io { .. }) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
