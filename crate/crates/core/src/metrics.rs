//! Regression metrics and clustering agreement.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    /// Mean of the defined per-gene correlations.
    pub pcc: f64,
    /// Correlation across spots for each gene; `None` where truth or
    /// prediction is constant.
    pub per_gene_pcc: Vec<Option<f64>>,
    pub excluded_genes: usize,
}

/// Pearson correlation, or `None` if either side has zero variance.
pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let n = a.len();
    if n == 0 || n != b.len() {
        return None;
    }
    let ma = a.sum() / n as f64;
    let mb = b.sum() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// MSE and MAE over all entries; PCC per gene across spots, then averaged
/// over genes where it is defined.
pub fn compute_metrics(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<MetricsReport> {
    if pred.dim() != truth.dim() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs truth {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let count = pred.len().max(1) as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        se += (p - t) * (p - t);
        ae += (p - t).abs();
    }
    let per_gene_pcc: Vec<Option<f64>> = pred
        .columns()
        .into_iter()
        .zip(truth.columns())
        .map(|(p, t)| pearson(p, t))
        .collect();
    let defined: Vec<f64> = per_gene_pcc.iter().flatten().copied().collect();
    let excluded_genes = per_gene_pcc.len() - defined.len();
    if excluded_genes > 0 {
        log::debug!("{excluded_genes} genes excluded from PCC (zero variance)");
    }
    let pcc = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(MetricsReport {
        mse: se / count,
        mae: ae / count,
        pcc,
        per_gene_pcc,
        excluded_genes,
    })
}

/// Element-wise mean of several reports (per-gene values averaged where
/// defined in at least one report).
pub fn mean_report(reports: &[MetricsReport]) -> Option<MetricsReport> {
    let first = reports.first()?;
    let k = reports.len() as f64;
    let genes = first.per_gene_pcc.len();
    let per_gene_pcc = (0..genes)
        .map(|g| {
            let vals: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.per_gene_pcc.get(g).copied().flatten())
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect::<Vec<_>>();
    Some(MetricsReport {
        mse: reports.iter().map(|r| r.mse).sum::<f64>() / k,
        mae: reports.iter().map(|r| r.mae).sum::<f64>() / k,
        pcc: reports.iter().map(|r| r.pcc).sum::<f64>() / k,
        excluded_genes: per_gene_pcc.iter().filter(|v| v.is_none()).count(),
        per_gene_pcc,
    })
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as u64;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // Both labelings trivial (single cluster or all singletons).
        return if index == expected { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}
