//! Slide-level k-fold cross-validation.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gnn::{GatConfig, GatModel};
use crate::metrics::{compute_metrics, mean_report, MetricsReport};
use crate::train::{predict, target_means, train, GraphSample, LinearBaseline, TrainConfig};

pub const DEFAULT_FOLDS: usize = 8;

fn sample_key(seed: u64, sample_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(sample_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Fold index for each sample id. Samples are ranked by a seeded hash of
/// their id and dealt round-robin, so the partition does not depend on input
/// order and fold sizes differ by at most one.
pub fn fold_assignment<S: AsRef<str>>(sample_ids: &[S], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {folds}")));
    }
    if sample_ids.len() < folds {
        return Err(Error::TooFewSamples {
            samples: sample_ids.len(),
            folds,
        });
    }
    let mut ranked: Vec<(u64, &str, usize)> = sample_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (sample_key(seed, id.as_ref()), id.as_ref(), i))
        .collect();
    ranked.sort_unstable();
    for w in ranked.windows(2) {
        if w[0].1 == w[1].1 {
            return Err(Error::InvalidParameter(format!("duplicate sample id {}", w[0].1)));
        }
    }
    let mut out = vec![0; sample_ids.len()];
    for (rank, &(_, _, i)) in ranked.iter().enumerate() {
        out[i] = rank % folds;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleReport {
    pub sample_id: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test: Vec<SampleReport>,
    /// Mean over the fold's test samples.
    pub mean: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    /// Mean over folds.
    pub mean: MetricsReport,
}

/// Runs `fit_predict(train, test)` on every fold and scores its predictions
/// against the test targets.
pub fn cross_validate_with<F>(
    samples: &[GraphSample],
    folds: usize,
    seed: u64,
    fit_predict: F,
) -> Result<CvReport>
where
    F: Fn(&[GraphSample], &[GraphSample]) -> Result<Vec<Array2<f64>>> + Sync,
{
    let ids: Vec<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    let assignment = fold_assignment(&ids, folds, seed)?;
    let fold_reports: Vec<Result<FoldReport>> = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<_>, Vec<_>) = samples
                .iter()
                .zip(&assignment)
                .partition(|(_, &f)| f == fold);
            let test: Vec<GraphSample> = test.into_iter().map(|(s, _)| s.clone()).collect();
            let train: Vec<GraphSample> = train.into_iter().map(|(s, _)| s.clone()).collect();
            let preds = fit_predict(&train, &test)?;
            let reports = test
                .iter()
                .zip(&preds)
                .map(|(s, p)| {
                    Ok(SampleReport {
                        sample_id: s.sample_id.clone(),
                        metrics: compute_metrics(p, &s.targets)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let metrics: Vec<MetricsReport> = reports.iter().map(|r| r.metrics.clone()).collect();
            Ok(FoldReport {
                fold,
                train_ids: train.iter().map(|s| s.sample_id.clone()).collect(),
                test: reports,
                mean: mean_report(&metrics).expect("every fold has a test sample"),
            })
        })
        .collect();
    let folds: Vec<FoldReport> = fold_reports.into_iter().collect::<Result<_>>()?;
    let means: Vec<MetricsReport> = folds.iter().map(|f| f.mean.clone()).collect();
    Ok(CvReport {
        mean: mean_report(&means).expect("at least two folds"),
        folds,
    })
}

/// Cross-validates the attention network. Each fold starts from a model
/// seeded by `train_config.seed` whose output bias is the training-target
/// mean; replicates are ranked by MSE on the held-out fold.
pub fn cross_validate(
    samples: &[GraphSample],
    folds: usize,
    gat_config: GatConfig,
    train_config: &TrainConfig,
) -> Result<CvReport> {
    train_config.validate()?;
    cross_validate_with(samples, folds, train_config.seed, |train_set, test_set| {
        let mut init = GatModel::new(gat_config, train_config.seed)?;
        if let Some(mean) = target_means(train_set) {
            init.set_output_bias(&mean)?;
        }
        let outcome = train(&init, train_set, test_set, train_config)?;
        test_set.iter().map(|s| predict(&outcome.model, s)).collect()
    })
}

/// Cross-validates the graph-free ridge baseline.
pub fn cross_validate_linear(samples: &[GraphSample], folds: usize, seed: u64, ridge: f64) -> Result<CvReport> {
    cross_validate_with(samples, folds, seed, |train_set, test_set| {
        let model = LinearBaseline::fit(train_set, ridge)?;
        Ok(test_set.iter().map(|s| model.predict(&s.features)).collect())
    })
}
