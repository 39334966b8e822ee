//! Haar-type multiresolution basis built from a [`PartitionTree`].

use crate::error::{Error, Result};
use crate::geometry::{CellRef, PartitionTree};

const DROP_TOLERANCE: f64 = 1e-10;

/// Orthonormal sparse basis `W`, columns ordered coarse to fine and, within a
/// level, by the id of the cell that supports them.
#[derive(Clone, Debug)]
pub struct MultiresBasis {
    n: usize,
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    values: Vec<f64>,
    level: Vec<usize>,
    support: Vec<CellRef>,
    level_offsets: Vec<usize>,
}

/// Orthonormalises `e_1..e_m` against `against` (unit vectors) by modified
/// Gram-Schmidt, keeping residuals above the drop tolerance.
fn complement(m: usize, against: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = against.to_vec();
    let mut out = Vec::new();
    for j in 0..m {
        let mut v = vec![0.0; m];
        v[j] = 1.0;
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < DROP_TOLERANCE {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v.clone());
        out.push(v);
        if out.len() + against.len() == m {
            break;
        }
    }
    out
}

/// Builds the basis: level 1 holds the normalised indicators of the level-1
/// cells; level `k >= 2` holds, for every level-`(k-1)` cell, an orthonormal
/// basis of the child indicators orthogonal to the parent constant.
pub fn build_haar_basis(tree: &PartitionTree) -> MultiresBasis {
    let n = tree.points().len();
    let mut b = MultiresBasis {
        n,
        col_ptr: vec![0],
        rows: Vec::with_capacity(n * tree.depth()),
        values: Vec::with_capacity(n * tree.depth()),
        level: Vec::with_capacity(n),
        support: Vec::with_capacity(n),
        level_offsets: vec![0],
    };
    for k in 1..=tree.depth() {
        let parents: Vec<CellRef> = if k == 1 {
            vec![CellRef::ROOT]
        } else {
            (0..tree.cells(k - 1).len()).map(|id| CellRef::new(k - 1, id)).collect()
        };
        for parent in parents {
            let children = tree.children(parent);
            let sizes: Vec<f64> = children.iter().map(|&c| tree.members(c).len() as f64).collect();
            let against = if k == 1 {
                Vec::new()
            } else {
                let total: f64 = sizes.iter().sum();
                vec![sizes.iter().map(|s| (s / total).sqrt()).collect()]
            };
            for coeffs in complement(children.len(), &against) {
                let mut entries: Vec<(usize, f64)> = Vec::new();
                for ((&child, &coef), &size) in children.iter().zip(&coeffs).zip(&sizes) {
                    if coef == 0.0 {
                        continue;
                    }
                    let value = coef / size.sqrt();
                    entries.extend(tree.members(child).iter().map(|&m| (m, value)));
                }
                entries.sort_unstable_by_key(|e| e.0);
                for (r, v) in entries {
                    b.rows.push(r);
                    b.values.push(v);
                }
                b.col_ptr.push(b.rows.len());
                b.level.push(k);
                b.support.push(parent);
            }
        }
        b.level_offsets.push(b.level.len());
    }
    b
}

impl MultiresBasis {
    /// Ambient dimension `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.level.len()
    }

    pub fn is_empty(&self) -> bool {
        self.level.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.level_offsets.len() - 1
    }

    pub fn level(&self, i: usize) -> usize {
        self.level[i]
    }

    /// The cell `t(w_i)` whose member set contains the support of column `i`.
    pub fn support_cell(&self, i: usize) -> CellRef {
        self.support[i]
    }

    /// Column indices of level `k` (1-based).
    pub fn level_range(&self, k: usize) -> std::ops::Range<usize> {
        self.level_offsets[k - 1]..self.level_offsets[k]
    }

    pub fn level_offsets(&self) -> &[usize] {
        &self.level_offsets
    }

    /// Row indices and values of column `i`.
    pub fn column(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.col_ptr[i]..self.col_ptr[i + 1];
        (&self.rows[range.clone()], &self.values[range])
    }

    /// `W v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), actual: v.len() });
        }
        let mut out = vec![0.0; self.n];
        for (i, &coef) in v.iter().enumerate() {
            if coef == 0.0 {
                continue;
            }
            let (rows, values) = self.column(i);
            for (&r, &w) in rows.iter().zip(values) {
                out[r] += coef * w;
            }
        }
        Ok(out)
    }

    /// `W^T u`.
    pub fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, actual: u.len() });
        }
        Ok((0..self.len())
            .map(|i| {
                let (rows, values) = self.column(i);
                rows.iter().zip(values).map(|(&r, &w)| w * u[r]).sum()
            })
            .collect())
    }

    /// Checks orthonormality, completeness, locality and vanishing means,
    /// returning the first violation found.
    pub fn check_invariants(&self, tree: &PartitionTree, tol: f64) -> std::result::Result<(), String> {
        if self.len() != self.n {
            return Err(format!("{} columns for dimension {}", self.len(), self.n));
        }
        let mut dense = vec![0.0; self.n];
        for i in 0..self.len() {
            let (rows, values) = self.column(i);
            let support = tree.members(self.support[i]);
            for &r in rows {
                if support.binary_search(&r).is_err() {
                    return Err(format!("column {i} has row {r} outside its support cell"));
                }
            }
            for (&r, &v) in rows.iter().zip(values) {
                dense[r] = v;
            }
            for j in i..self.len() {
                let (rj, vj) = self.column(j);
                let dot: f64 = rj.iter().zip(vj).map(|(&r, &v)| dense[r] * v).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > tol {
                    return Err(format!("<w_{i}, w_{j}> = {dot}"));
                }
            }
            if self.level[i] >= 2 {
                for (cid, cell) in tree.cells(self.level[i] - 1).iter().enumerate() {
                    let sum: f64 = cell.members.iter().map(|&m| dense[m]).sum();
                    if sum.abs() > tol {
                        return Err(format!("column {i} has mean {sum} on cell {cid}"));
                    }
                }
            }
            for &r in rows {
                dense[r] = 0.0;
            }
        }
        Ok(())
    }
}
