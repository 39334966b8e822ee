//! Problem setup, the end-to-end recovery pipeline, error estimation and
//! experiment sweeps.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{build_haar_basis, MultiresBasis};
use crate::coloring::{aggregate_supernodes, color_simplicial, color_supernodal, Coloring, SupernodeSet};
use crate::error::{Error, Result};
use crate::factor::SparseFactor;
use crate::geometry::{build_general_partition, build_regular_partition, PartitionTree, PointSet};
use crate::measurement::{build_measurements, build_supernodal_measurements, observe};
use crate::oracles::{
    load_coordinates, read_matrix_market, Counted, DenseOracle, FractionalOracle, MatrixFileOracle, SolveMethod,
    SolverOracle, StencilOracle, StencilScale,
};
use crate::recovery::{cholesky_recover, supernodal_cholesky_recover};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    LaplacePotential,
    RoughConductivity,
    Fractional,
    MatrixFile,
    /// The laplace-potential matrix served by a dense factorization.
    DenseTest,
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "laplace_potential" => Self::LaplacePotential,
            "rough_conductivity" => Self::RoughConductivity,
            "fractional" => Self::Fractional,
            "matrix_file" => Self::MatrixFile,
            "dense_test" => Self::DenseTest,
            other => return Err(Error::InvalidParameter(format!("unknown problem '{other}'"))),
        })
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LaplacePotential => "laplace_potential",
            Self::RoughConductivity => "rough_conductivity",
            Self::Fractional => "fractional",
            Self::MatrixFile => "matrix_file",
            Self::DenseTest => "dense_test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Grid points per axis.
    pub n: usize,
    pub dim: usize,
    /// Fractional order.
    pub s: f64,
    pub seed: u64,
    pub matrix: Option<PathBuf>,
    /// Sidecar coordinates for `matrix`.
    pub coords: Option<PathBuf>,
    pub scale: StencilScale,
}

impl ProblemSpec {
    pub fn grid(kind: ProblemKind, n: usize, dim: usize, seed: u64) -> Self {
        Self { kind, n, dim, s: 1.0, seed, matrix: None, coords: None, scale: StencilScale::Unit }
    }

    pub fn fractional(n: usize, dim: usize, s: f64) -> Self {
        Self { s, ..Self::grid(ProblemKind::Fractional, n, dim, 0) }
    }

    pub fn matrix_file(matrix: PathBuf, coords: Option<PathBuf>) -> Self {
        Self { matrix: Some(matrix), coords, ..Self::grid(ProblemKind::MatrixFile, 0, 1, 0) }
    }
}

/// An oracle together with the partition and basis it is probed in.
pub struct Problem {
    pub oracle: Box<dyn SolverOracle>,
    pub tree: PartitionTree,
    pub basis: MultiresBasis,
}

pub fn build_problem(spec: &ProblemSpec) -> Result<Problem> {
    let (oracle, tree): (Box<dyn SolverOracle>, PartitionTree) = match spec.kind {
        ProblemKind::MatrixFile => {
            let path = spec
                .matrix
                .clone()
                .ok_or_else(|| Error::InvalidParameter("matrix_file problems need a matrix path".into()))?;
            let matrix = read_matrix_market(&path)?;
            let n = matrix.n;
            let points = match &spec.coords {
                Some(c) => load_coordinates(c, n)?,
                None => PointSet::new(1, (0..n).map(|i| [i as f64 / n as f64, 0.0, 0.0]).collect(), false)?,
            };
            let oracle = MatrixFileOracle::from_matrix(&matrix, path)?;
            (Box::new(oracle), general_tree(points)?)
        }
        kind => {
            let dims = vec![spec.n; spec.dim];
            let tree = build_regular_partition(&dims, true)?;
            let oracle: Box<dyn SolverOracle> = match kind {
                ProblemKind::LaplacePotential if spec.scale == StencilScale::Unit => {
                    Box::new(StencilOracle::laplacian_potential(spec.n, spec.dim, spec.seed)?)
                }
                ProblemKind::LaplacePotential => {
                    let w = StencilOracle::laplacian_potential(spec.n, spec.dim, spec.seed)?;
                    Box::new(StencilOracle::with_coefficients(
                        spec.n,
                        spec.dim,
                        w.potential().to_vec(),
                        None,
                        spec.scale,
                        SolveMethod::Direct,
                    )?)
                }
                ProblemKind::RoughConductivity => {
                    let r = StencilOracle::rough_conductivity(spec.n, spec.dim, spec.seed)?;
                    if spec.scale == StencilScale::Unit {
                        Box::new(r)
                    } else {
                        Box::new(StencilOracle::with_coefficients(
                            spec.n,
                            spec.dim,
                            r.potential().to_vec(),
                            Some(r.conductivity().to_vec()),
                            spec.scale,
                            SolveMethod::Direct,
                        )?)
                    }
                }
                ProblemKind::Fractional => Box::new(FractionalOracle::new(spec.n, spec.dim, spec.s)?),
                ProblemKind::DenseTest => {
                    let a = StencilOracle::with_coefficients(
                        spec.n,
                        spec.dim,
                        StencilOracle::laplacian_potential(spec.n, spec.dim, spec.seed)?.potential().to_vec(),
                        None,
                        spec.scale,
                        SolveMethod::ConjugateGradient,
                    )?;
                    Box::new(DenseOracle::from_system(a.dense_matrix())?)
                }
                ProblemKind::MatrixFile => unreachable!(),
            };
            (oracle, tree)
        }
    };
    let basis = build_haar_basis(&tree);
    Ok(Problem { oracle, tree, basis })
}

/// General partition with `h = 1/2` and as many levels as the point spacing
/// allows.
fn general_tree(points: PointSet) -> Result<PartitionTree> {
    let h: f64 = 0.5;
    let mut q = 1;
    if points.len() >= 2 {
        let spacing = points.min_spacing();
        while 0.5 * h.powi(q as i32) >= spacing {
            q += 1;
        }
    }
    build_general_partition(points, h, q)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    #[default]
    Simplicial,
    Supernodal,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplicial" => Ok(Self::Simplicial),
            "supernodal" => Ok(Self::Supernodal),
            other => Err(Error::InvalidParameter(format!("unknown mode '{other}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Simplicial => "simplicial",
            Self::Supernodal => "supernodal",
        })
    }
}

pub struct Recovery {
    pub factor: SparseFactor,
    pub coloring: Coloring,
    pub supernodes: Option<SupernodeSet>,
}

/// Coloring, measurements, observation and recovery for one `rho`.
pub fn recover(problem: &Problem, rho: f64, mode: Mode) -> Result<Recovery> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho = {rho} must be positive")));
    }
    let Problem { oracle, tree, basis } = problem;
    match mode {
        Mode::Simplicial => {
            let coloring = color_simplicial(basis, tree, rho);
            let m = build_measurements(&coloring, basis.len())?;
            let obs = observe(oracle.as_ref(), basis, m)?;
            let factor = cholesky_recover(&obs, &coloring, basis, tree)?;
            Ok(Recovery { factor, coloring, supernodes: None })
        }
        Mode::Supernodal => {
            let supernodes = aggregate_supernodes(basis, tree, rho);
            let coloring = color_supernodal(&supernodes, tree, rho);
            let m = build_supernodal_measurements(&coloring, &supernodes, basis.len())?;
            let obs = observe(oracle.as_ref(), basis, m)?;
            let factor = supernodal_cholesky_recover(&obs, &coloring, &supernodes, basis, tree)?;
            Ok(Recovery { factor, coloring, supernodes: Some(supernodes) })
        }
    }
}

/// `Theta x = W^T omega(W x)`.
pub fn apply_theta(oracle: &dyn SolverOracle, basis: &MultiresBasis, x: &[f64]) -> Result<Vec<f64>> {
    basis.apply_transpose(&oracle.apply(&basis.apply(x)?)?)
}

/// Dense `Theta` from one oracle call per basis function.
pub fn probe_dense_theta(oracle: &dyn SolverOracle, basis: &MultiresBasis) -> Result<Vec<Vec<f64>>> {
    (0..basis.len())
        .map(|i| {
            let mut e = vec![0.0; basis.len()];
            e[i] = 1.0;
            apply_theta(oracle, basis, &e)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorEstimate {
    pub rel_err: f64,
    pub norm_theta: f64,
    pub norm_e: f64,
    /// Oracle calls spent on the estimate.
    pub oracle_calls: usize,
}

/// Power-iteration lower bound for the spectral norm of a symmetric
/// operator. Uses `|A v_t| / |v_t|`, which is nondecreasing in `t`.
fn power_norm(n: usize, iters: usize, seed: u64, mut op: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut best = 0.0f64;
    for _ in 0..iters {
        let nv = norm(&v);
        if nv == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let w = op(&v)?;
        best = best.max(norm(&w));
        v = w;
    }
    Ok(best)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|Theta - L L^T| / |Theta|` in the spectral norm, both norms from `iters`
/// power steps started from the same seeded vector.
pub fn estimate_rel_error(
    oracle: &dyn SolverOracle,
    basis: &MultiresBasis,
    factor: &SparseFactor,
    iters: usize,
    seed: u64,
) -> Result<ErrorEstimate> {
    if iters == 0 {
        return Err(Error::InvalidParameter("at least one power iteration is needed".into()));
    }
    let counted = Counted::new(oracle);
    let n = basis.len();
    let norm_e = power_norm(n, iters, seed, |v| {
        let t = apply_theta(&counted, basis, v)?;
        let l = factor.matvec(v)?;
        Ok(t.iter().zip(&l).map(|(a, b)| a - b).collect())
    })?;
    let norm_theta = power_norm(n, iters, seed, |v| apply_theta(&counted, basis, v))?;
    Ok(ErrorEstimate { rel_err: norm_e / norm_theta, norm_theta, norm_e, oracle_calls: counted.calls() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub rhos: Vec<f64>,
    pub mode: Mode,
    pub seed: u64,
    pub eval_iters: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rhos.is_empty() || self.rhos.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidParameter("rho values must be positive".into()));
        }
        if self.rhos.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("rho values must be strictly ascending".into()));
        }
        if self.eval_iters == 0 {
            return Err(Error::InvalidParameter("eval iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub rho: f64,
    /// Recovery oracle calls only.
    pub matvecs: usize,
    pub rel_err: f64,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let problem = build_problem(&config.problem)?;
    config
        .rhos
        .iter()
        .map(|&rho| {
            let rec = recover(&problem, rho, config.mode)?;
            let est = estimate_rel_error(
                problem.oracle.as_ref(),
                &problem.basis,
                &rec.factor,
                config.eval_iters,
                config.seed,
            )?;
            Ok(SweepRow { rho, matvecs: rec.factor.provenance().matvecs, rel_err: est.rel_err })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "rho,matvecs,rel_err")?;
    for r in rows {
        writeln!(w, "{},{},{:.12e}", r.rho, r.matvecs, r.rel_err)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowRankRow {
    /// Leading colors kept.
    pub colors: usize,
    /// Columns kept.
    pub k: usize,
    pub rel_err: f64,
}

/// Color prefixes ending at each level boundary.
pub fn level_cuts(factor: &SparseFactor, coloring: &Coloring) -> Vec<usize> {
    let mut cuts = Vec::new();
    for (c, pair) in coloring.colors().windows(2).enumerate() {
        if pair[0].level != pair[1].level {
            cuts.push(c + 1);
        }
    }
    cuts.retain(|&c| factor.color_ptr()[c] < factor.n());
    cuts
}

/// Relative error of the leading-color truncations of `factor`.
pub fn lowrank_study(
    problem: &Problem,
    factor: &SparseFactor,
    cuts: &[usize],
    iters: usize,
    seed: u64,
) -> Result<Vec<LowRankRow>> {
    cuts.iter()
        .map(|&colors| {
            let t = factor.truncate_colors(colors)?;
            let est = estimate_rel_error(problem.oracle.as_ref(), &problem.basis, &t, iters, seed)?;
            Ok(LowRankRow { colors, k: t.ncols(), rel_err: est.rel_err })
        })
        .collect()
}

pub fn write_lowrank_csv(rows: &[LowRankRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "colors,k,rel_err")?;
    for r in rows {
        writeln!(w, "{},{},{:.12e}", r.colors, r.k, r.rel_err)?;
    }
    Ok(())
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug)]
pub struct SelfTestResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Invariant checks on small problems.
pub fn selftest(seed: u64) -> Vec<SelfTestResult> {
    let mut out = Vec::new();
    let mut record = |name: &'static str, r: std::result::Result<String, String>| {
        let (passed, detail) = match r {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        out.push(SelfTestResult { name, passed, detail });
    };
    let problem = match build_problem(&ProblemSpec::grid(ProblemKind::LaplacePotential, 8, 2, seed)) {
        Ok(p) => p,
        Err(e) => {
            record("problem", Err(e.to_string()));
            return out;
        }
    };
    record("partition", problem.tree.check_invariants(1e-12).map(|_| format!("{} levels", problem.tree.depth())));
    record(
        "basis",
        problem.basis.check_invariants(&problem.tree, 1e-12).map(|_| format!("{} functions", problem.basis.len())),
    );
    record(
        "oracle",
        crate::oracles::probe_oracle(problem.oracle.as_ref(), seed).map_err(|e| e.to_string()).and_then(|p| {
            let msg = format!("linearity {:.1e}, symmetry {:.1e}", p.linearity, p.symmetry);
            if p.linearity <= 1e-10 && p.symmetry <= 1e-10 {
                Ok(msg)
            } else {
                Err(msg)
            }
        }),
    );
    for rho in [2.0, f64::INFINITY] {
        let coloring = color_simplicial(&problem.basis, &problem.tree, rho);
        record(
            "coloring",
            crate::coloring::check_coloring(&coloring, &problem.basis, &problem.tree, None)
                .map(|_| format!("rho {rho}: {} colors", coloring.len())),
        );
    }
    let sn = aggregate_supernodes(&problem.basis, &problem.tree, 2.0);
    let coloring = color_supernodal(&sn, &problem.tree, 2.0);
    record(
        "supernodal coloring",
        crate::coloring::check_coloring(&coloring, &problem.basis, &problem.tree, Some(&sn))
            .map(|_| format!("{} supernodes, {} colors", sn.len(), coloring.len())),
    );
    let exact = recover(&problem, f64::INFINITY, Mode::Simplicial)
        .and_then(|r| estimate_rel_error(problem.oracle.as_ref(), &problem.basis, &r.factor, 30, seed))
        .map_err(|e| e.to_string())
        .and_then(|e| {
            let msg = format!("relative error {:.2e}", e.rel_err);
            if e.rel_err <= 1e-10 {
                Ok(msg)
            } else {
                Err(msg)
            }
        });
    record("exactness", exact);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_factor_has_unit_error() {
        let problem = build_problem(&ProblemSpec::grid(ProblemKind::LaplacePotential, 8, 2, 1)).unwrap();
        let rec = recover(&problem, f64::INFINITY, Mode::Simplicial).unwrap();
        let zero = rec.factor.truncate_columns(0).unwrap();
        let est = estimate_rel_error(problem.oracle.as_ref(), &problem.basis, &zero, 20, 3).unwrap();
        assert_eq!(est.rel_err, 1.0);
        assert_eq!(est.oracle_calls, 40);
    }

    #[test]
    fn problem_names_round_trip() {
        for k in [
            ProblemKind::LaplacePotential,
            ProblemKind::RoughConductivity,
            ProblemKind::Fractional,
            ProblemKind::MatrixFile,
            ProblemKind::DenseTest,
        ] {
            assert_eq!(k.to_string().parse::<ProblemKind>().unwrap(), k);
        }
        assert!("poisson".parse::<ProblemKind>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig {
            problem: ProblemSpec::grid(ProblemKind::LaplacePotential, 8, 2, 0),
            rhos: vec![2.0, 3.0],
            mode: Mode::Simplicial,
            seed: 0,
            eval_iters: 20,
        };
        assert!(c.validate().is_ok());
        c.rhos = vec![3.0, 2.0];
        assert!(c.validate().is_err());
        c.rhos = vec![0.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn slope_of_a_line() {
        assert!((fit_slope(&[1.0, 2.0, 3.0], &[1.0, -1.0, -3.0]) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn selftest_passes() {
        for r in selftest(0) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
