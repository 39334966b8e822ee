#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use faer::{Mat, Side};

use opfactor_core::analysis::probe_dense_theta;
use opfactor_core::oracles::DenseOracle;
use opfactor_core::{build_problem, MultiresBasis, Problem, ProblemKind, ProblemSpec, SparseFactor};

pub fn laplace(n: usize, seed: u64) -> Problem {
    build_problem(&ProblemSpec::grid(ProblemKind::LaplacePotential, n, 2, seed)).unwrap()
}

pub fn to_mat(a: &[Vec<f64>]) -> Mat<f64> {
    Mat::from_fn(a.len(), a[0].len(), |i, j| a[i][j])
}

pub fn from_mat(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn sub(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect()).collect()
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let m = to_mat(a);
    m.as_ref().self_adjoint_eigenvalues(Side::Lower).unwrap()
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm(a: &[Vec<f64>]) -> f64 {
    eigenvalues(a).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Lower Cholesky factor from an independent dense implementation.
pub fn dense_cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = to_mat(a);
    let llt = m.as_ref().llt(Side::Lower).unwrap();
    let l = llt.L().to_owned();
    from_mat(&l)
}

pub fn theta(problem: &Problem) -> Vec<Vec<f64>> {
    probe_dense_theta(problem.oracle.as_ref(), &problem.basis).unwrap()
}

/// Dense `W`, column `i` being basis function `i`.
pub fn dense_basis(basis: &MultiresBasis) -> Vec<Vec<f64>> {
    let n = basis.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            basis.apply(&e).unwrap()
        })
        .collect();
    (0..basis.n()).map(|r| cols.iter().map(|c| c[r]).collect()).collect()
}

/// Oracle whose operator in basis coordinates is exactly `theta`.
pub fn oracle_for_theta(basis: &MultiresBasis, theta: &[Vec<f64>]) -> DenseOracle {
    let w = dense_basis(basis);
    let n = w.len();
    let wt: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..theta.len()).map(|k| (0..theta.len()).map(|j| w[i][j] * theta[j][k]).sum()).collect())
        .collect();
    let mut inv: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|r| (0..theta.len()).map(|k| wt[i][k] * w[r][k]).sum()).collect()).collect();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[i][j] + inv[j][i]);
            inv[i][j] = v;
            inv[j][i] = v;
        }
    }
    DenseOracle::from_inverse(inv).unwrap()
}

/// `|A - B|_max / |B|_max`.
pub fn max_rel(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let scale = b.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    sub(a, b).iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())) / scale
}

/// Largest entrywise difference between two factors relative to the larger
/// of the two magnitudes.
pub fn factor_rel_diff(a: &SparseFactor, b: &SparseFactor) -> f64 {
    assert_eq!(a.order(), b.order());
    assert_eq!(a.ncols(), b.ncols());
    let mut worst = 0.0f64;
    for c in 0..a.ncols() {
        let (ra, va) = a.column(c);
        let (rb, vb) = b.column(c);
        assert_eq!(ra, rb, "column {c} patterns differ");
        for (x, y) in va.iter().zip(vb) {
            let scale = x.abs().max(y.abs());
            if scale > 0.0 {
                worst = worst.max((x - y).abs() / scale);
            }
        }
    }
    worst
}
