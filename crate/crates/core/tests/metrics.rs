mod common;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;
use stgraph::metrics::{adjusted_rand_index, compute_metrics, mean_report, pearson};

/// Textbook formulas computed in a separate pass structure from the library.
fn oracle(pred: &Array2<f64>, truth: &Array2<f64>) -> (f64, f64, f64) {
    let (n, m) = pred.dim();
    let mut se = 0.0;
    let mut ae = 0.0;
    for i in 0..n {
        for j in 0..m {
            let d = pred[[i, j]] - truth[[i, j]];
            se += d * d;
            ae += d.abs();
        }
    }
    let mut pccs = Vec::new();
    for j in 0..m {
        let p: Vec<f64> = (0..n).map(|i| pred[[i, j]]).collect();
        let t: Vec<f64> = (0..n).map(|i| truth[[i, j]]).collect();
        let mp = p.iter().sum::<f64>() / n as f64;
        let mt = t.iter().sum::<f64>() / n as f64;
        let cov: f64 = p.iter().zip(&t).map(|(a, b)| (a - mp) * (b - mt)).sum();
        let vp: f64 = p.iter().map(|a| (a - mp).powi(2)).sum();
        let vt: f64 = t.iter().map(|b| (b - mt).powi(2)).sum();
        if vp > 0.0 && vt > 0.0 {
            pccs.push(cov / (vp * vt).sqrt());
        }
    }
    let pcc = if pccs.is_empty() { 0.0 } else { pccs.iter().sum::<f64>() / pccs.len() as f64 };
    (se / (n * m) as f64, ae / (n * m) as f64, pcc)
}

fn random_case(seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = common::rng(seed);
    let n = rng.random_range(2..60);
    let m = rng.random_range(1..12);
    let truth = common::normal_matrix(n, m, &mut rng);
    let noise = common::normal_matrix(n, m, &mut rng);
    let pred = &truth * rng.random_range(-1.0..2.0) + &noise;
    (pred, truth)
}

#[test]
fn twenty_by_five_matches_oracle() {
    let mut rng = common::rng(20);
    let truth = common::normal_matrix(20, 5, &mut rng);
    let pred = &truth + &common::normal_matrix(20, 5, &mut rng).mapv(|v| 0.3 * v);
    let r = compute_metrics(&pred, &truth).unwrap();
    let (mse, mae, pcc) = oracle(&pred, &truth);
    assert!((r.mse - mse).abs() <= 1e-12);
    assert!((r.mae - mae).abs() <= 1e-12);
    assert!((r.pcc - pcc).abs() <= 1e-12);
    assert_eq!(r.excluded_genes, 0);
}

#[test]
fn hundred_random_cases_match_oracle() {
    for seed in 0..100 {
        let (pred, truth) = random_case(seed);
        let r = compute_metrics(&pred, &truth).unwrap();
        let (mse, mae, pcc) = oracle(&pred, &truth);
        assert!((r.mse - mse).abs() <= 1e-12, "seed {seed}");
        assert!((r.mae - mae).abs() <= 1e-12, "seed {seed}");
        assert!((r.pcc - pcc).abs() <= 1e-12, "seed {seed}");
    }
}

#[test]
fn perfect_prediction() {
    let t = array![[1.0, 2.0], [3.0, 5.0], [4.0, 1.0]];
    let r = compute_metrics(&t, &t).unwrap();
    assert_eq!((r.mse, r.mae), (0.0, 0.0));
    assert!((r.pcc - 1.0).abs() <= 1e-15);
}

#[test]
fn constant_gene_is_excluded() {
    let truth = array![[1.0, 7.0], [2.0, 7.0], [3.0, 7.0]];
    let pred = array![[1.5, 1.0], [2.0, 2.0], [2.5, 3.0]];
    let r = compute_metrics(&pred, &truth).unwrap();
    assert_eq!(r.excluded_genes, 1);
    assert_eq!(r.per_gene_pcc[1], None);
    assert!((r.pcc - 1.0).abs() <= 1e-12);

    let all_const = compute_metrics(&Array2::zeros((3, 2)), &Array2::ones((3, 2))).unwrap();
    assert_eq!(all_const.pcc, 0.0);
    assert_eq!(all_const.excluded_genes, 2);
}

#[test]
fn shape_mismatch_is_an_error() {
    assert!(compute_metrics(&Array2::zeros((2, 3)), &Array2::zeros((3, 2))).is_err());
}

#[test]
fn pearson_degenerate_inputs() {
    assert_eq!(pearson(array![1.0, 1.0].view(), array![1.0, 2.0].view()), None);
    assert_eq!(pearson(array![1.0].view(), array![1.0, 2.0].view()), None);
}

#[test]
fn mean_report_averages() {
    let a = compute_metrics(&array![[1.0], [2.0]], &array![[1.0], [3.0]]).unwrap();
    let b = compute_metrics(&array![[0.0], [0.0]], &array![[1.0], [1.0]]).unwrap();
    let m = mean_report(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(m.mse, (a.mse + b.mse) / 2.0);
    assert_eq!(m.per_gene_pcc, a.per_gene_pcc);
    assert!(mean_report(&[]).is_none());
}

#[test]
fn ari_examples() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]), 1.0);
    let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
    assert!(v < 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn per_gene_pcc_is_affine_invariant(seed in any::<u64>(), scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
        let (pred, truth) = random_case(seed);
        let base = compute_metrics(&pred, &truth).unwrap();
        let moved = compute_metrics(&pred.mapv(|v| scale * v + shift), &truth).unwrap();
        for (a, b) in base.per_gene_pcc.iter().zip(&moved.per_gene_pcc) {
            prop_assert!((a.unwrap() - b.unwrap()).abs() <= 1e-9);
        }
        if (scale - 1.0).abs() > 1e-3 || shift.abs() > 1e-3 {
            prop_assert!(moved.mse != base.mse);
        }
    }
}
