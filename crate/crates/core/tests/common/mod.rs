#![allow(dead_code)]

pub mod oracle;

use hybrid_svds::matio::SparseMatrixCsr;
use hybrid_svds::svds::compute_svd_residual;
use hybrid_svds::SvdsResult;

/// All singular values of `a`, descending, from the dense Jacobi oracle.
pub fn oracle_sigma(a: &SparseMatrixCsr) -> Vec<f64> {
    let d = a.to_dense();
    oracle::jacobi_svd(d.as_slice(), a.nrows(), a.ncols()).0
}

/// Residual of every returned triplet, recomputed from scratch.
pub fn recomputed_rnorms(a: &SparseMatrixCsr, r: &SvdsResult) -> Vec<f64> {
    (0..r.sigma.len())
        .map(|i| compute_svd_residual(a, r.sigma[i], r.u.col(i), r.v.col(i)).unwrap())
        .collect()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn max_offdiag_gram(cols: &[&[f64]]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..cols.len() {
        for j in 0..cols.len() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(cols[i], cols[j]) - target).abs());
        }
    }
    worst
}

pub fn sparse_from_fixture(name: &str) -> SparseMatrixCsr {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    hybrid_svds::read_matrix_market(path).unwrap()
}

pub fn fixture_sigma(name: &str) -> Vec<f64> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('%') && !l.trim().is_empty())
        .map(|l| l.trim().parse().unwrap())
        .collect()
}

/// `‖Aᵀu‖` from explicit triplets.
pub fn oracle_norm_at(a: &SparseMatrixCsr, u: &[f64]) -> f64 {
    let mut y = vec![0.0; a.ncols()];
    for (i, j, v) in a.triplets() {
        y[j] += v * u[i];
    }
    y.iter().map(|t| t * t).sum::<f64>().sqrt()
}
