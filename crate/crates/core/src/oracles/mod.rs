//! Black-box solution operators `b -> A^{-1} b`.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

mod dense;
mod fractional;
mod matrix_market;
mod stencil;

pub use dense::DenseOracle;
pub use fractional::FractionalOracle;
pub use matrix_market::{load_coordinates, load_matrix_oracle, read_matrix_market, MatrixFileOracle};
pub use stencil::{SolveMethod, StencilOracle, StencilScale};

/// A self-adjoint solve `omega(b) = A^{-1} b`.
pub trait SolverOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn apply(&self, b: &[f64]) -> Result<Vec<f64>>;

    /// Whether `apply` may run on several right-hand sides at once.
    fn concurrent_safe(&self) -> bool {
        true
    }
}

impl<T: SolverOracle + ?Sized> SolverOracle for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        (**self).apply(b)
    }

    fn concurrent_safe(&self) -> bool {
        (**self).concurrent_safe()
    }
}

impl<T: SolverOracle + ?Sized> SolverOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        (**self).apply(b)
    }

    fn concurrent_safe(&self) -> bool {
        (**self).concurrent_safe()
    }
}

/// Wraps an oracle and counts calls to `apply`.
pub struct Counted<O> {
    inner: O,
    calls: AtomicUsize,
}

impl<O: SolverOracle> Counted<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: SolverOracle> SolverOracle for Counted<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.apply(b)
    }

    fn concurrent_safe(&self) -> bool {
        self.inner.concurrent_safe()
    }
}

pub(crate) fn check_len(oracle: &dyn SolverOracle, b: &[f64]) -> Result<()> {
    if b.len() != oracle.dim() {
        return Err(Error::DimensionMismatch { expected: oracle.dim(), actual: b.len() });
    }
    Ok(())
}

/// Largest relative deviations seen by [`probe_oracle`].
#[derive(Clone, Copy, Debug)]
pub struct ProbeReport {
    pub linearity: f64,
    pub symmetry: f64,
}

/// Spot-checks linearity and symmetry on three seeded random probes.
/// Costs five oracle calls.
pub fn probe_oracle(oracle: &dyn SolverOracle, seed: u64) -> Result<ProbeReport> {
    let n = oracle.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || (0..n).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<f64>>();
    let (a, b) = (draw(), draw());
    let (alpha, beta) = (0.75, -1.25);
    let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
    let (ua, ub, uc) = (oracle.apply(&a)?, oracle.apply(&b)?, oracle.apply(&combo)?);
    let expected: Vec<f64> = ua.iter().zip(&ub).map(|(x, y)| alpha * x + beta * y).collect();
    let scale = norm(&expected).max(f64::MIN_POSITIVE);
    let diff: Vec<f64> = uc.iter().zip(&expected).map(|(x, y)| x - y).collect();
    let linearity = norm(&diff) / scale;

    let (c, d) = (draw(), draw());
    let (uc, ud) = (oracle.apply(&c)?, oracle.apply(&d)?);
    let left = dot(&c, &ud);
    let right = dot(&uc, &d);
    let symmetry = (left - right).abs() / (norm(&c) * norm(&ud)).max(f64::MIN_POSITIVE);
    Ok(ProbeReport { linearity, symmetry })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Conjugate gradients for an SPD operator given as a matvec closure.
pub(crate) fn conjugate_gradient(
    n: usize,
    matvec: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * b_norm {
            return Ok(x);
        }
        matvec(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    if rr.sqrt() <= tol * b_norm {
        return Ok(x);
    }
    Err(Error::CgNotConverged { residual: rr.sqrt() / b_norm, iterations: max_iter })
}

/// Independent uniform draws on `[0,1)` from stream `stream` of `seed`.
pub(crate) fn uniform_stream(seed: u64, stream: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count).map(|_| rng.random::<f64>()).collect()
}
