use crate::dense::{cholesky_in_place, cholesky_solve};
use crate::error::{Error, Result};

use super::{check_len, SolverOracle};

enum Mode {
    /// Lower Cholesky factor of `A`; apply solves.
    Factored(Vec<f64>),
    /// `A^{-1}` itself; apply multiplies.
    Inverse(Vec<f64>),
}

/// In-memory SPD oracle for tests and small problems.
pub struct DenseOracle {
    n: usize,
    mode: Mode,
}

fn flatten(rows: Vec<Vec<f64>>) -> Result<(usize, Vec<f64>)> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * n);
    for row in rows {
        if row.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: row.len() });
        }
        flat.extend(row);
    }
    for i in 0..n {
        for j in 0..i {
            let diff = (flat[i * n + j] - flat[j * n + i]).abs();
            let scale = flat[i * n + j].abs().max(flat[j * n + i].abs()).max(1.0);
            if diff > 1e-12 * scale {
                return Err(Error::NotSymmetric { row: i, col: j, diff });
            }
        }
    }
    Ok((n, flat))
}

impl DenseOracle {
    /// Oracle solving with the SPD matrix `a`.
    pub fn from_system(a: Vec<Vec<f64>>) -> Result<Self> {
        let (n, mut flat) = flatten(a)?;
        cholesky_in_place(&mut flat, n, 0.0)
            .map_err(|(i, p)| Error::NotPositiveDefinite(format!("pivot {p:.3e} at row {i}")))?;
        Ok(Self { n, mode: Mode::Factored(flat) })
    }

    /// Oracle that applies the given symmetric matrix directly, as if it were
    /// already the inverse.
    pub fn from_inverse(inverse: Vec<Vec<f64>>) -> Result<Self> {
        let (n, flat) = flatten(inverse)?;
        Ok(Self { n, mode: Mode::Inverse(flat) })
    }
}

impl SolverOracle for DenseOracle {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len(self, b)?;
        let n = self.n;
        Ok(match &self.mode {
            Mode::Factored(c) => {
                let mut x = b.to_vec();
                cholesky_solve(c, n, &mut x);
                x
            }
            Mode::Inverse(m) => (0..n).map(|i| (0..n).map(|j| m[i * n + j] * b[j]).sum()).collect(),
        })
    }
}
