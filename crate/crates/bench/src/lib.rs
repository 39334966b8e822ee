//! Shared fixtures for the benchmarks.

use opfactor_core::{build_problem, Problem, ProblemKind, ProblemSpec};

/// The random-potential Laplacian on a periodic `n x n` grid.
pub fn laplace_problem(n: usize) -> Problem {
    build_problem(&ProblemSpec::grid(ProblemKind::LaplacePotential, n, 2, 7)).expect("valid grid")
}
