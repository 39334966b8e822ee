use faer::prelude::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::geometry::GridShape;

use super::{check_len, conjugate_gradient, uniform_stream, SolverOracle};

const POTENTIAL_STREAM: u64 = 0;
const CONDUCTIVITY_STREAM: u64 = 1;
const CONDUCTIVITY_FLOOR: f64 = 1e-4;

/// Weighting of the difference stencil.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StencilScale {
    /// Unit off-diagonal weights.
    #[default]
    Unit,
    /// Weights `1/h^2 = n^2`, the second-difference approximation of `-Laplace`.
    MeshWidth,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SolveMethod {
    /// Sparse Cholesky computed once, falling back to CG if it fails.
    #[default]
    Direct,
    ConjugateGradient,
}

/// `A = -div(a grad)_h + diag(1 + W)` on a periodic `n^d` grid, with one
/// conductivity per grid edge.
pub struct StencilOracle {
    shape: GridShape,
    potential: Vec<f64>,
    /// Edge `(p, p + e_axis)` is stored at `p * dim + axis`.
    conductivity: Vec<f64>,
    weight: f64,
    factor: Option<Llt<usize, f64>>,
}

impl StencilOracle {
    /// Unit-conductivity Laplacian plus the random potential `1 + W_i`.
    pub fn laplacian_potential(n: usize, dim: usize, seed: u64) -> Result<Self> {
        let shape = grid_shape(n, dim)?;
        let potential = uniform_stream(seed, POTENTIAL_STREAM, shape.len());
        Self::with_coefficients(n, dim, potential, None, StencilScale::Unit, SolveMethod::Direct)
    }

    /// Edge conductivities `Z_e + 1e-4` plus the same potential as
    /// [`StencilOracle::laplacian_potential`] for equal seeds.
    pub fn rough_conductivity(n: usize, dim: usize, seed: u64) -> Result<Self> {
        let shape = grid_shape(n, dim)?;
        let potential = uniform_stream(seed, POTENTIAL_STREAM, shape.len());
        let conductivity = uniform_stream(seed, CONDUCTIVITY_STREAM, shape.len() * dim)
            .into_iter()
            .map(|z| z + CONDUCTIVITY_FLOOR)
            .collect();
        Self::with_coefficients(n, dim, potential, Some(conductivity), StencilScale::Unit, SolveMethod::Direct)
    }

    /// Oracle with explicit potential `W` and edge conductivities (all ones
    /// when `None`).
    pub fn with_coefficients(
        n: usize,
        dim: usize,
        potential: Vec<f64>,
        conductivity: Option<Vec<f64>>,
        scale: StencilScale,
        method: SolveMethod,
    ) -> Result<Self> {
        let shape = grid_shape(n, dim)?;
        let len = shape.len();
        if potential.len() != len {
            return Err(Error::DimensionMismatch { expected: len, actual: potential.len() });
        }
        let conductivity = conductivity.unwrap_or_else(|| vec![1.0; len * dim]);
        if conductivity.len() != len * dim {
            return Err(Error::DimensionMismatch { expected: len * dim, actual: conductivity.len() });
        }
        if potential.iter().any(|&w| !(w >= 0.0)) || conductivity.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidParameter(
                "coefficients must be nonnegative potential and positive conductivity".into(),
            ));
        }
        let weight = match scale {
            StencilScale::Unit => 1.0,
            StencilScale::MeshWidth => (n * n) as f64,
        };
        let mut oracle = Self { shape, potential, conductivity, weight, factor: None };
        if method == SolveMethod::Direct {
            let a = SparseColMat::<usize, f64>::try_new_from_triplets(len, len, &oracle.triplets())
                .map_err(|e| Error::InvalidParameter(format!("matrix assembly failed: {e:?}")))?;
            oracle.factor = a.sp_cholesky(Side::Lower).ok();
        }
        Ok(oracle)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn conductivity(&self) -> &[f64] {
        &self.conductivity
    }

    /// Ratio of the largest to the smallest edge conductivity.
    pub fn contrast(&self) -> f64 {
        let max = self.conductivity.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.conductivity.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }

    pub fn uses_direct_solver(&self) -> bool {
        self.factor.is_some()
    }

    // Lower-triangle entries, duplicates merged.
    fn triplets(&self) -> Vec<Triplet<usize, usize, f64>> {
        let dim = self.shape.dim;
        let mut diag: Vec<f64> = self.potential.iter().map(|w| 1.0 + w).collect();
        let mut off = std::collections::BTreeMap::new();
        for p in 0..self.shape.len() {
            for axis in 0..dim {
                let q = self.shape.periodic_neighbor(p, axis, 1);
                let a = self.weight * self.conductivity[p * dim + axis];
                diag[p] += a;
                diag[q] += a;
                let key = (p.max(q), p.min(q));
                *off.entry(key).or_insert(0.0) -= a;
            }
        }
        let mut t: Vec<_> = diag.iter().enumerate().map(|(p, &d)| Triplet::new(p, p, d)).collect();
        t.extend(off.into_iter().map(|((r, c), v)| Triplet::new(r, c, v)));
        t
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.matvec_into(x, &mut out);
        out
    }

    fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        let dim = self.shape.dim;
        for (p, o) in out.iter_mut().enumerate() {
            *o = (1.0 + self.potential[p]) * x[p];
        }
        for p in 0..self.shape.len() {
            for axis in 0..dim {
                let q = self.shape.periodic_neighbor(p, axis, 1);
                let flux = self.weight * self.conductivity[p * dim + axis] * (x[p] - x[q]);
                out[p] += flux;
                out[q] -= flux;
            }
        }
    }

    /// Dense copy of `A`, for small reference computations.
    pub fn dense_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.shape.len();
        let mut m = vec![vec![0.0; n]; n];
        for t in self.triplets() {
            m[t.row][t.col] += t.val;
            if t.row != t.col {
                m[t.col][t.row] += t.val;
            }
        }
        m
    }
}

fn grid_shape(n: usize, dim: usize) -> Result<GridShape> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidParameter(format!("dimension {dim} not in 1..=3")));
    }
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidGrid { axis: 0, size: n });
    }
    Ok(GridShape::new(n, dim))
}

impl SolverOracle for StencilOracle {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len(self, b)?;
        let n = b.len();
        match &self.factor {
            Some(llt) => {
                let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
                let x = llt.solve(&rhs);
                Ok((0..n).map(|i| x[(i, 0)]).collect())
            }
            None => conjugate_gradient(n, |v, out| self.matvec_into(v, out), b, 1e-13, 10 * n),
        }
    }
}
