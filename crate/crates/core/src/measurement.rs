//! Measurement matrices built from colorings and the observations `Theta M`.

use rayon::prelude::*;

use crate::basis::MultiresBasis;
use crate::coloring::{Coloring, SupernodeSet};
use crate::error::{Error, Result};
use crate::oracles::{Counted, SolverOracle};

/// Sparse 0/1 matrix with rows indexed by basis functions. Column `t` of
/// color `c` is `sum_i e_i` over the listed indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurements {
    n: usize,
    columns: Vec<Vec<usize>>,
    color_ptr: Vec<usize>,
}

impl Measurements {
    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[usize] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<usize>] {
        &self.columns
    }

    /// Columns belonging to color `c`.
    pub fn color_columns(&self, c: usize) -> std::ops::Range<usize> {
        self.color_ptr[c]..self.color_ptr[c + 1]
    }

    pub fn ncolors(&self) -> usize {
        self.color_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// Dense copy, row-major `nrows x ncols`.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.ncols()]; self.n];
        for (j, col) in self.columns.iter().enumerate() {
            for &i in col {
                m[i][j] = 1.0;
            }
        }
        m
    }
}

/// `M_{:,c} = sum_{i in c} e_i`, one column per color.
pub fn build_measurements(coloring: &Coloring, n: usize) -> Result<Measurements> {
    if coloring.is_supernodal() {
        return Err(Error::InvalidParameter("simplicial measurements need a simplicial coloring".into()));
    }
    let columns: Vec<Vec<usize>> = coloring.colors().iter().map(|c| c.members.clone()).collect();
    let color_ptr = (0..=columns.len()).collect();
    Ok(Measurements { n, columns, color_ptr })
}

/// Block measurements: color `c` gets `m_c` columns, the largest supernode
/// size in the color, and row `i` sits in column `eta(i)` of its color.
pub fn build_supernodal_measurements(coloring: &Coloring, supernodes: &SupernodeSet, n: usize) -> Result<Measurements> {
    if !coloring.is_supernodal() {
        return Err(Error::InvalidParameter("block measurements need a supernodal coloring".into()));
    }
    let mut columns = Vec::new();
    let mut color_ptr = vec![0];
    for color in coloring.colors() {
        let width = color.members.iter().map(|&s| supernodes.node(s).members.len()).max().unwrap_or(0);
        for eta in 0..width {
            columns.push(color.members.iter().filter_map(|&s| supernodes.node(s).members.get(eta).copied()).collect());
        }
        color_ptr.push(columns.len());
    }
    Ok(Measurements { n, columns, color_ptr })
}

/// Observations `O = W^T omega(W M)` in multiresolution coordinates.
#[derive(Clone, Debug)]
pub struct ObservationSet {
    measurements: Measurements,
    values: Vec<Vec<f64>>,
    matvecs: usize,
}

impl ObservationSet {
    pub fn measurements(&self) -> &Measurements {
        &self.measurements
    }

    /// Column `j` of `O`, indexed by basis function.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    /// Oracle calls spent producing the observations.
    pub fn matvecs(&self) -> usize {
        self.matvecs
    }

    /// Largest absolute observed value.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Calls the oracle once per column of `m`. Columns run concurrently when the
/// oracle allows it; results land in fixed slots either way.
pub fn observe(oracle: &dyn SolverOracle, basis: &MultiresBasis, m: Measurements) -> Result<ObservationSet> {
    if oracle.dim() != basis.n() {
        return Err(Error::DimensionMismatch { expected: basis.n(), actual: oracle.dim() });
    }
    if m.nrows() != basis.len() {
        return Err(Error::DimensionMismatch { expected: basis.len(), actual: m.nrows() });
    }
    let counted = Counted::new(oracle);
    let probe = |(j, col): (usize, &Vec<usize>)| -> Result<Vec<f64>> {
        let mut coeffs = vec![0.0; basis.len()];
        for &i in col {
            coeffs[i] = 1.0;
        }
        let b = basis.apply(&coeffs)?;
        let u = counted.apply(&b).map_err(|e| Error::OracleColumn { column: j, source: Box::new(e) })?;
        basis.apply_transpose(&u)
    };
    let results: Vec<Result<Vec<f64>>> = if oracle.concurrent_safe() {
        m.columns.par_iter().enumerate().map(probe).collect()
    } else {
        m.columns.iter().enumerate().map(probe).collect()
    };
    let values = results.into_iter().collect::<Result<Vec<_>>>()?;
    let matvecs = counted.calls();
    assert_eq!(matvecs, m.ncols(), "one oracle call per measurement column");
    Ok(ObservationSet { measurements: m, values, matvecs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_haar_basis;
    use crate::coloring::{aggregate_supernodes, color_simplicial, color_supernodal};
    use crate::geometry::build_regular_partition;
    use crate::oracles::DenseOracle;

    #[test]
    fn singleton_colors_give_identity() {
        let tree = build_regular_partition(&[2], false).unwrap();
        let basis = build_haar_basis(&tree);
        let coloring = color_simplicial(&basis, &tree, f64::INFINITY);
        let m = build_measurements(&coloring, 2).unwrap();
        assert_eq!(m.to_dense(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn shared_color_sums_unit_vectors() {
        let tree = build_regular_partition(&[4], false).unwrap();
        let basis = build_haar_basis(&tree);
        let coloring = color_simplicial(&basis, &tree, 1e-9);
        let m = build_measurements(&coloring, 4).unwrap();
        assert_eq!(m.ncols(), 3);
        assert_eq!(m.column(2), &[2, 3]);
        assert_eq!(m.nnz(), 4);
    }

    #[test]
    fn block_measurements_follow_eta() {
        let tree = build_regular_partition(&[16, 16], true).unwrap();
        let basis = build_haar_basis(&tree);
        let sn = aggregate_supernodes(&basis, &tree, 2.0);
        let coloring = color_supernodal(&sn, &tree, 2.0);
        let m = build_supernodal_measurements(&coloring, &sn, basis.len()).unwrap();
        assert_eq!(m.nnz(), basis.len());
        for (c, color) in coloring.colors().iter().enumerate() {
            let width = color.members.iter().map(|&s| sn.node(s).members.len()).max().unwrap();
            assert_eq!(m.color_columns(c).len(), width);
            for (t, j) in m.color_columns(c).enumerate() {
                for &i in m.column(j) {
                    assert_eq!(sn.eta(i), t);
                }
                let mut owners: Vec<usize> = m.column(j).iter().map(|&i| sn.member_of(i)).collect();
                owners.dedup();
                assert_eq!(owners.len(), m.column(j).len());
            }
        }
    }

    #[test]
    fn identity_oracle_observes_identity() {
        let tree = build_regular_partition(&[4, 4], false).unwrap();
        let basis = build_haar_basis(&tree);
        let coloring = color_simplicial(&basis, &tree, f64::INFINITY);
        let eye: Vec<Vec<f64>> = (0..16).map(|i| (0..16).map(|j| f64::from(i == j)).collect()).collect();
        let oracle = DenseOracle::from_inverse(eye).unwrap();
        let m = build_measurements(&coloring, 16).unwrap();
        let obs = observe(&oracle, &basis, m).unwrap();
        assert_eq!(obs.matvecs(), 16);
        for (c, color) in coloring.colors().iter().enumerate() {
            let i = color.members[0];
            for (r, v) in obs.column(c).iter().enumerate() {
                assert!((v - f64::from(r == i)).abs() < 1e-12);
            }
        }
    }

    struct Failing;

    impl SolverOracle for Failing {
        fn dim(&self) -> usize {
            4
        }

        fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
            if b[3] != 0.0 {
                return Err(Error::CgNotConverged { residual: 1.0, iterations: 1 });
            }
            Ok(b.to_vec())
        }
    }

    #[test]
    fn oracle_failure_names_the_column() {
        let tree = build_regular_partition(&[4], false).unwrap();
        let basis = build_haar_basis(&tree);
        let coloring = color_simplicial(&basis, &tree, f64::INFINITY);
        let m = build_measurements(&coloring, 4).unwrap();
        match observe(&Failing, &basis, m) {
            Err(Error::OracleColumn { column, .. }) => assert_eq!(column, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
