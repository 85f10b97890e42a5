//! Training loop for the attention network and a graph-free linear baseline.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{mse_loss, GatGrads, GatModel, Mode};
use crate::metrics::{compute_metrics, MetricsReport};

pub const DEFAULT_SEED: u64 = 3927;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::InvalidParameter(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub replicate_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: DEFAULT_SEED,
            replicate_count: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.replicate_count == 0 {
            return Err(Error::InvalidParameter("replicate_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// One slide prepared for training: message-passing pairs, node features and
/// regression targets.
#[derive(Debug, Clone)]
pub struct GraphSample {
    pub sample_id: String,
    pub pairs: Vec<(usize, usize)>,
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
}

impl GraphSample {
    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GatModel,
    /// Mean training loss per epoch of the selected replicate.
    pub loss_curve: Vec<f64>,
    pub best_replicate: usize,
    /// Selection MSE of every replicate.
    pub replicate_scores: Vec<f64>,
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8), or plain SGD.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, model: &GatModel) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        Self {
            kind,
            lr,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn apply(&mut self, model: &mut GatModel, grads: &GatGrads) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step);
        let c2 = 1.0 - B2.powi(self.step);
        for (t, (param, grad)) in model.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in param.iter_mut().zip(grad) {
                        *p -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[t], &mut self.v[t]);
                    for k in 0..param.len() {
                        let g = grad[k];
                        m[k] = B1 * m[k] + (1.0 - B1) * g;
                        v[k] = B2 * v[k] + (1.0 - B2) * g * g;
                        let mh = m[k] / c1;
                        let vh = v[k] / c2;
                        param[k] -= self.lr * mh / (vh.sqrt() + EPS);
                    }
                }
            }
        }
    }
}

fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 + 1);
    rng.random()
}

/// Trains one replicate in place. Each epoch visits every sample once in a
/// seeded shuffled order and takes one optimiser step per sample.
pub fn train_replicate(
    model: &mut GatModel,
    samples: &[GraphSample],
    config: &TrainConfig,
    replicate: usize,
) -> Result<Vec<f64>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(config.seed, replicate));
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, model);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &s in &order {
            let sample = &samples[s];
            let mask_seed: u64 = rng.random();
            let (loss, grads) = model.loss_and_grads(
                &sample.pairs,
                &sample.features,
                &sample.targets,
                Mode::Train,
                mask_seed,
            )?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    replicate,
                    epoch,
                    loss,
                });
            }
            opt.apply(model, &grads);
            total += loss;
        }
        curve.push(total / samples.len() as f64);
    }
    Ok(curve)
}

/// Eval-mode predictions for one sample.
pub fn predict(model: &GatModel, sample: &GraphSample) -> Result<Array2<f64>> {
    Ok(model
        .forward(&sample.pairs, &sample.features, Mode::Eval, 0)?
        .output)
}

/// Mean eval-mode MSE over samples.
pub fn mean_mse(model: &GatModel, samples: &[GraphSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += mse_loss(&predict(model, s)?, &s.targets).0;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Metrics per sample.
pub fn evaluate(model: &GatModel, samples: &[GraphSample]) -> Result<Vec<MetricsReport>> {
    samples
        .iter()
        .map(|s| compute_metrics(&predict(model, s)?, &s.targets))
        .collect()
}

/// Trains `replicate_count` replicates and keeps the one with the lowest MSE
/// on `selection` (the training samples when `selection` is empty).
///
/// Replicate 0 starts from `model_init`; later replicates redraw all weights
/// from their own seed but keep `model_init`'s output bias.
pub fn train(
    model_init: &GatModel,
    samples: &[GraphSample],
    selection: &[GraphSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let selection = if selection.is_empty() { samples } else { selection };
    let runs: Vec<Result<(GatModel, Vec<f64>, f64)>> = (0..config.replicate_count)
        .into_par_iter()
        .map(|r| {
            let mut model = if r == 0 {
                model_init.clone()
            } else {
                let mut m = GatModel::new(model_init.config, replicate_seed(config.seed ^ 0x5eed, r))?;
                let bias = model_init.layers.last().expect("layers").bias.clone();
                m.set_output_bias(&bias)?;
                m
            };
            let curve = train_replicate(&mut model, samples, config, r)?;
            let score = mean_mse(&model, selection)?;
            Ok((model, curve, score))
        })
        .collect();
    let mut best: Option<(usize, GatModel, Vec<f64>)> = None;
    let mut scores = Vec::with_capacity(runs.len());
    for (r, run) in runs.into_iter().enumerate() {
        let (model, curve, score) = run?;
        let better = scores.iter().all(|&s: &f64| score < s);
        scores.push(score);
        if better {
            best = Some((r, model, curve));
        }
    }
    let (best_replicate, model, loss_curve) = best.expect("at least one replicate");
    Ok(TrainOutcome {
        model,
        loss_curve,
        best_replicate,
        replicate_scores: scores,
    })
}

/// Per-gene mean of the targets over all training spots.
pub fn target_means(samples: &[GraphSample]) -> Option<Array1<f64>> {
    let m = samples.first()?.targets.ncols();
    let mut sum = Array1::<f64>::zeros(m);
    let mut count = 0usize;
    for s in samples {
        sum += &s.targets.sum_axis(Axis(0));
        count += s.targets.nrows();
    }
    Some(sum / count.max(1) as f64)
}

/// Per-spot ridge regression from features to targets with an unpenalised
/// intercept; ignores the graph entirely.
#[derive(Debug, Clone)]
pub struct LinearBaseline {
    /// (d + 1) x m; the last row is the intercept.
    pub coef: Array2<f64>,
}

impl LinearBaseline {
    pub fn fit(samples: &[GraphSample], ridge: f64) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidParameter("no training samples".into()))?;
        let d = first.features.ncols();
        let m = first.targets.ncols();
        let mut xtx = DMatrix::<f64>::zeros(d + 1, d + 1);
        let mut xty = DMatrix::<f64>::zeros(d + 1, m);
        for s in samples {
            for (x, y) in s.features.rows().into_iter().zip(s.targets.rows()) {
                let xr: Vec<f64> = x.iter().copied().chain([1.0]).collect();
                for a in 0..=d {
                    for b in 0..=d {
                        xtx[(a, b)] += xr[a] * xr[b];
                    }
                    for g in 0..m {
                        xty[(a, g)] += xr[a] * y[g];
                    }
                }
            }
        }
        for a in 0..d {
            xtx[(a, a)] += ridge;
        }
        let chol = xtx.cholesky().ok_or_else(|| {
            Error::InvalidParameter("linear baseline normal equations are singular".into())
        })?;
        let mut coef = Array2::zeros((d + 1, m));
        for g in 0..m {
            let sol: DVector<f64> = chol.solve(&xty.column(g).into_owned());
            for a in 0..=d {
                coef[[a, g]] = sol[a];
            }
        }
        Ok(Self { coef })
    }

    pub fn predict(&self, features: &Array2<f64>) -> Array2<f64> {
        let d = features.ncols();
        features.dot(&self.coef.slice(ndarray::s![..d, ..])) + &self.coef.row(d)
    }
}
