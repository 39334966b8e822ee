//! Cholesky recovery from colored measurements, simplicial and supernodal.
//!
//! Both variants run through one block engine: the simplicial algorithm is
//! the block algorithm with every block a single basis function. Work happens
//! in position space, where position `p` holds basis index `order[p]` and the
//! positions follow the coloring (coarse to fine, colors contiguous).

use std::ops::Range;

use rayon::prelude::*;

use crate::basis::MultiresBasis;
use crate::coloring::{Coloring, SupernodeSet};
use crate::dense::{cholesky_in_place, right_solve_transpose};
use crate::error::{Error, Result};
use crate::factor::{Provenance, SparseFactor};
use crate::geometry::{CellRef, PartitionTree};
use crate::measurement::ObservationSet;

/// Relative size of pivots treated as nonpositive.
pub const PIVOT_TOLERANCE: f64 = 1e-14;
/// Allowed relative size of the upper part of a recomputed diagonal block.
pub const DIAGONAL_CHECK_TOLERANCE: f64 = 1e-10;

struct Block {
    /// Basis index (simplicial) or supernode id (supernodal).
    label: usize,
    start: usize,
    members: Vec<usize>,
    cells: Vec<CellRef>,
}

impl Block {
    fn positions(&self) -> Range<usize> {
        self.start..self.start + self.members.len()
    }
}

struct Plan {
    blocks: Vec<Block>,
    color_blocks: Vec<Range<usize>>,
    order: Vec<usize>,
    position: Vec<usize>,
}

impl Plan {
    fn simplicial(coloring: &Coloring, basis: &MultiresBasis) -> Result<Self> {
        if coloring.is_supernodal() {
            return Err(Error::InvalidParameter("expected a simplicial coloring".into()));
        }
        let groups = coloring
            .colors()
            .iter()
            .map(|c| c.members.iter().map(|&i| (i, vec![i], vec![basis.support_cell(i)])).collect::<Vec<_>>());
        Self::from_groups(groups, basis.len())
    }

    fn supernodal(coloring: &Coloring, supernodes: &SupernodeSet, basis: &MultiresBasis) -> Result<Self> {
        if !coloring.is_supernodal() {
            return Err(Error::InvalidParameter("expected a supernodal coloring".into()));
        }
        let groups = coloring.colors().iter().map(|c| {
            c.members
                .iter()
                .map(|&s| {
                    let node = supernodes.node(s);
                    (s, node.members.clone(), node.cells().to_vec())
                })
                .collect::<Vec<_>>()
        });
        Self::from_groups(groups, basis.len())
    }

    fn from_groups(groups: impl Iterator<Item = Vec<(usize, Vec<usize>, Vec<CellRef>)>>, n: usize) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut color_blocks = Vec::new();
        let mut order = Vec::with_capacity(n);
        for group in groups {
            let first = blocks.len();
            for (label, members, cells) in group {
                let start = order.len();
                order.extend_from_slice(&members);
                blocks.push(Block { label, start, members, cells });
            }
            color_blocks.push(first..blocks.len());
        }
        let mut position = vec![usize::MAX; n];
        for (p, &i) in order.iter().enumerate() {
            if i >= n || position[i] != usize::MAX {
                return Err(Error::InvalidParameter(format!("basis index {i} is not colored exactly once")));
            }
            position[i] = p;
        }
        if order.len() != n {
            return Err(Error::InvalidParameter(format!("coloring covers {} of {n} basis indices", order.len())));
        }
        Ok(Self { blocks, color_blocks, order, position })
    }

    fn block_distance(&self, tree: &PartitionTree, a: usize, b: usize) -> f64 {
        let mut best = f64::INFINITY;
        for &ca in &self.blocks[a].cells {
            for &cb in &self.blocks[b].cells {
                best = best.min(tree.cell_distance(ca, cb));
                if best == 0.0 {
                    return 0.0;
                }
            }
        }
        best
    }

    /// For every block from the start of color `c` onwards, the block of `c`
    /// whose column receives its rows: members map to themselves, later blocks
    /// to the nearest member (lowest position on ties).
    fn scatter_targets(&self, tree: &PartitionTree, c: usize) -> Vec<usize> {
        let members = self.color_blocks[c].clone();
        let own = members.clone().collect::<Vec<_>>();
        let later: Vec<usize> = if members.len() == 1 {
            vec![members.start; self.blocks.len() - members.end]
        } else {
            (members.end..self.blocks.len())
                .into_par_iter()
                .map(|b| {
                    let mut best = members.start;
                    let mut best_dist = f64::INFINITY;
                    for m in members.clone() {
                        let d = self.block_distance(tree, b, m);
                        if d < best_dist {
                            best_dist = d;
                            best = m;
                        }
                    }
                    best
                })
                .collect()
        };
        own.into_iter().chain(later).collect()
    }

    /// Checks that the observation columns of each color are the block
    /// measurements implied by the plan.
    fn check_measurements(&self, obs: &ObservationSet) -> Result<()> {
        let m = obs.measurements();
        if m.ncolors() != self.color_blocks.len() {
            return Err(Error::InvalidParameter(format!(
                "observations have {} colors, coloring has {}",
                m.ncolors(),
                self.color_blocks.len()
            )));
        }
        for (c, range) in self.color_blocks.iter().enumerate() {
            let width = range.clone().map(|b| self.blocks[b].members.len()).max().unwrap_or(0);
            let cols = m.color_columns(c);
            if cols.len() != width {
                return Err(Error::InvalidParameter(format!(
                    "color {c} has {} measurement columns, expected {width}",
                    cols.len()
                )));
            }
            for (t, j) in cols.enumerate() {
                let expected: Vec<usize> =
                    range.clone().filter_map(|b| self.blocks[b].members.get(t).copied()).collect();
                if m.column(j) != expected.as_slice() {
                    return Err(Error::InvalidParameter(format!("measurement column {j} does not match color {c}")));
                }
            }
        }
        Ok(())
    }
}

/// Factor under construction: columns (CSC) plus per-row column lists.
struct Builder {
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    values: Vec<f64>,
    row_cols: Vec<Vec<u32>>,
    row_values: Vec<Vec<f64>>,
}

impl Builder {
    fn new(n: usize) -> Self {
        Self {
            col_ptr: vec![0],
            rows: Vec::new(),
            values: Vec::new(),
            row_cols: vec![Vec::new(); n],
            row_values: vec![Vec::new(); n],
        }
    }

    fn ncols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    fn column(&self, c: usize) -> (&[u32], &[f64]) {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        (&self.rows[range.clone()], &self.values[range])
    }

    fn push_column(&mut self, entries: &[(usize, f64)]) {
        let col = self.ncols() as u32;
        for &(r, v) in entries {
            self.rows.push(r as u32);
            self.values.push(v);
            self.row_cols[r].push(col);
            self.row_values[r].push(v);
        }
        self.col_ptr.push(self.rows.len());
    }
}

/// `(row, value)` pairs of one factor column.
type SparseColumn = Vec<(usize, f64)>;

/// Measurement columns whose residuals share one pass over the factor.
const BATCH_COLUMNS: usize = 32;

/// `resid[(r - base) * stride + off + t] -= L[r, col] * ys[k * w + t]` for the
/// `k`-th entry `col` of `cols` and all rows `r >= from`. Every row sees the
/// columns in the order given, independently of the chunking.
#[allow(clippy::too_many_arguments)]
fn subtract_product(
    builder: &Builder,
    resid: &mut [f64],
    base: usize,
    stride: usize,
    off: usize,
    w: usize,
    from: usize,
    cols: &[usize],
    ys: &[f64],
    threads: usize,
) {
    let nrows = resid.len() / stride - (from - base);
    if nrows == 0 || cols.is_empty() {
        return;
    }
    let chunk_rows = nrows.div_ceil(threads).max(256);
    resid[(from - base) * stride..].par_chunks_mut(chunk_rows * stride).enumerate().for_each(|(k, chunk)| {
        let r0 = from + k * chunk_rows;
        let r1 = r0 + chunk.len() / stride;
        for (&col, yc) in cols.iter().zip(ys.chunks_exact(w)) {
            let (rows, vals) = builder.column(col);
            let first = rows.partition_point(|&r| (r as usize) < r0);
            let last = first + rows[first..].partition_point(|&r| (r as usize) < r1);
            if first == last {
                continue;
            }
            let (rows, vals) = (&rows[first..last], &vals[first..last]);
            let lo = rows[0] as usize;
            if rows[rows.len() - 1] as usize - lo == rows.len() - 1 {
                // Contiguous run of rows.
                let dst = &mut chunk[(lo - r0) * stride..(lo - r0 + rows.len()) * stride];
                for (row, &v) in dst.chunks_exact_mut(stride).zip(vals) {
                    for (d, yt) in row[off..off + w].iter_mut().zip(yc) {
                        *d -= v * yt;
                    }
                }
                continue;
            }
            for (&r, &v) in rows.iter().zip(vals) {
                let r = r as usize;
                let dst = &mut chunk[(r - r0) * stride + off..(r - r0) * stride + off + w];
                for (d, yt) in dst.iter_mut().zip(yc) {
                    *d -= v * yt;
                }
            }
        }
    });
}

/// Compacts `y` (indexed `col * w + t`) to the touched columns, ascending.
fn compact(y: &[f64], w: usize, touched: &mut [usize], shift: usize) -> Vec<f64> {
    touched.sort_unstable();
    touched.iter().flat_map(|&col| y[(col - shift) * w..(col - shift + 1) * w].iter().copied()).collect()
}

fn run(plan: &Plan, obs: &ObservationSet, tree: &PartitionTree, provenance: Provenance) -> Result<SparseFactor> {
    plan.check_measurements(obs)?;
    let n = plan.order.len();
    let tol = PIVOT_TOLERANCE * obs.max_abs();
    let mut builder = Builder::new(n);
    let threads = rayon::current_num_threads().max(1);
    let m = obs.measurements();
    let ncolors = plan.color_blocks.len();
    let color_start = |c: usize| plan.blocks[plan.color_blocks[c].start].start;

    let mut c_begin = 0;
    while c_begin < ncolors {
        let mut c_end = c_begin + 1;
        let mut width = m.color_columns(c_begin).len();
        while c_end < ncolors && width + m.color_columns(c_end).len() <= BATCH_COLUMNS {
            width += m.color_columns(c_end).len();
            c_end += 1;
        }
        let pb = color_start(c_begin);
        let first_col = m.color_columns(c_begin).start;

        // y = L^T M over the batch, through the rows of the measured positions.
        let mut y = vec![0.0; pb * width];
        let mut mark = vec![false; pb];
        let mut touched = Vec::new();
        for cc in c_begin..c_end {
            let off = m.color_columns(cc).start - first_col;
            for b in plan.color_blocks[cc].clone() {
                for (t, &i) in plan.blocks[b].members.iter().enumerate() {
                    let r = plan.position[i];
                    for (&col, &v) in builder.row_cols[r].iter().zip(&builder.row_values[r]) {
                        let col = col as usize;
                        y[col * width + off + t] += v;
                        if !std::mem::replace(&mut mark[col], true) {
                            touched.push(col);
                        }
                    }
                }
            }
        }
        let ys = compact(&y, width, &mut touched, 0);

        // Residual O - L y on positions pb.., row-major with `width` columns.
        let mut resid = vec![0.0; (n - pb) * width];
        let obs_cols: Vec<&[f64]> = (first_col..first_col + width).map(|j| obs.column(j)).collect();
        for (row, &i) in resid.chunks_exact_mut(width).zip(&plan.order[pb..]) {
            for (v, col) in row.iter_mut().zip(&obs_cols) {
                *v = col[i];
            }
        }
        subtract_product(&builder, &mut resid, pb, width, 0, width, pb, &touched, &ys, threads);

        for c in c_begin..c_end {
            let range = &plan.color_blocks[c];
            let p0 = color_start(c);
            debug_assert_eq!(builder.ncols(), p0);
            let off = m.color_columns(c).start - first_col;
            let w = m.color_columns(c).len();

            // Columns recovered earlier in this batch.
            if p0 > pb {
                let mut y = vec![0.0; (p0 - pb) * w];
                let mut mark = vec![false; p0 - pb];
                let mut touched = Vec::new();
                for b in range.clone() {
                    for (t, &i) in plan.blocks[b].members.iter().enumerate() {
                        let r = plan.position[i];
                        let (cols, vals) = (&builder.row_cols[r], &builder.row_values[r]);
                        let from = cols.partition_point(|&col| (col as usize) < pb);
                        for (&col, &v) in cols[from..].iter().zip(&vals[from..]) {
                            let col = col as usize;
                            y[(col - pb) * w + t] += v;
                            if !std::mem::replace(&mut mark[col - pb], true) {
                                touched.push(col);
                            }
                        }
                    }
                }
                let ys = compact(&y, w, &mut touched, pb);
                subtract_product(&builder, &mut resid, pb, width, off, w, p0, &touched, &ys, threads);
            }

            // Scatter rows to their target blocks, then normalise each block column.
            let targets = plan.scatter_targets(tree, c);
            let first_block = range.start;
            let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); range.len()];
            for (offset, &t) in targets.iter().enumerate() {
                assigned[t - first_block].push(first_block + offset);
            }

            let columns: Vec<Result<Vec<SparseColumn>>> = range
                .clone()
                .into_par_iter()
                .map(|tb| {
                    let block = &plan.blocks[tb];
                    let len = block.members.len();
                    let residual_row = |r: usize| &resid[(r - pb) * width + off..(r - pb) * width + off + len];
                    let mut diag = vec![0.0; len * len];
                    for (a, r) in block.positions().enumerate() {
                        diag[a * len..(a + 1) * len].copy_from_slice(residual_row(r));
                    }
                    let mut sym = diag.clone();
                    for a in 0..len {
                        for b in 0..len {
                            sym[a * len + b] = 0.5 * (diag[a * len + b] + diag[b * len + a]);
                        }
                    }
                    let mut chol = sym.clone();
                    if let Err((idx, pivot)) = cholesky_in_place(&mut chol, len, tol) {
                        return Err(if len == 1 {
                            Error::NonPositivePivot { color: c, index: block.members[idx], value: pivot }
                        } else {
                            Error::BlockNotPositiveDefinite {
                                color: c,
                                supernode: block.label,
                                eigenvalue_bound: pivot,
                            }
                        });
                    }
                    let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); len];
                    let mut x = vec![0.0; len];
                    for (a, r) in block.positions().enumerate() {
                        x.copy_from_slice(&sym[a * len..(a + 1) * len]);
                        right_solve_transpose(&chol, len, &mut x);
                        let scale = x[..=a].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                        let upper = x[a + 1..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                        if upper > DIAGONAL_CHECK_TOLERANCE * scale {
                            return Err(Error::DiagonalBlockCheck { block: block.label, residual: upper / scale });
                        }
                        for (t, col) in out.iter_mut().enumerate().take(a + 1) {
                            col.push((r, x[t]));
                        }
                    }
                    for &b in &assigned[tb - first_block] {
                        if b == tb {
                            continue;
                        }
                        for r in plan.blocks[b].positions() {
                            x.copy_from_slice(residual_row(r));
                            right_solve_transpose(&chol, len, &mut x);
                            for (t, col) in out.iter_mut().enumerate() {
                                col.push((r, x[t]));
                            }
                        }
                    }
                    Ok(out)
                })
                .collect();
            for block_columns in columns {
                for col in block_columns? {
                    builder.push_column(&col);
                }
            }
        }
        c_begin = c_end;
    }

    let Builder { col_ptr, rows, values, .. } = builder;
    let color_ptr: Vec<usize> =
        plan.color_blocks.iter().map(|r| plan.blocks[r.start].start).chain(std::iter::once(n)).collect();
    SparseFactor::from_parts(n, col_ptr, rows, values, plan.order.clone(), color_ptr, provenance)
}

/// Recovers `L` with `L L^T ~ Theta` from one observation per color.
pub fn cholesky_recover(
    obs: &ObservationSet,
    coloring: &Coloring,
    basis: &MultiresBasis,
    tree: &PartitionTree,
) -> Result<SparseFactor> {
    let plan = Plan::simplicial(coloring, basis)?;
    let provenance =
        Provenance { rho: coloring.rho(), coloring_id: coloring.id(), supernodal: false, matvecs: obs.matvecs() };
    run(&plan, obs, tree, provenance)
}

/// Block variant of [`cholesky_recover`] acting on supernodes.
pub fn supernodal_cholesky_recover(
    obs: &ObservationSet,
    coloring: &Coloring,
    supernodes: &SupernodeSet,
    basis: &MultiresBasis,
    tree: &PartitionTree,
) -> Result<SparseFactor> {
    let plan = Plan::supernodal(coloring, supernodes, basis)?;
    let provenance =
        Provenance { rho: coloring.rho(), coloring_id: coloring.id(), supernodal: true, matvecs: obs.matvecs() };
    run(&plan, obs, tree, provenance)
}

/// One column of a scatter result: `entries` are `(basis index, value)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterColumn {
    pub column: usize,
    pub entries: Vec<(usize, f64)>,
}

/// Splits `u` (indexed by basis function) among the members of color `c`:
/// entry `i` goes to the member `j` with `j` before or at `i` in the coloring
/// order and nearest support, ties to the earliest member.
pub fn scatter_simplicial(
    u: &[f64],
    coloring: &Coloring,
    c: usize,
    basis: &MultiresBasis,
    tree: &PartitionTree,
) -> Result<Vec<ScatterColumn>> {
    let plan = Plan::simplicial(coloring, basis)?;
    if u.len() != basis.len() {
        return Err(Error::DimensionMismatch { expected: basis.len(), actual: u.len() });
    }
    let range = plan.color_blocks[c].clone();
    let mut out: Vec<ScatterColumn> =
        range.clone().map(|b| ScatterColumn { column: plan.blocks[b].label, entries: Vec::new() }).collect();
    for (offset, t) in plan.scatter_targets(tree, c).into_iter().enumerate() {
        let i = plan.blocks[range.start + offset].label;
        out[t - range.start].entries.push((i, u[i]));
    }
    Ok(out)
}

/// One block column of a supernodal scatter: rows are `(basis index, values)`
/// with as many values as the target supernode has members.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockColumn {
    pub supernode: usize,
    pub rows: Vec<(usize, Vec<f64>)>,
}

/// Block analogue of [`scatter_simplicial`]. `u[t]` is column `t` of the
/// block vector, indexed by basis function.
pub fn scatter_supernodal(
    u: &[Vec<f64>],
    coloring: &Coloring,
    c: usize,
    supernodes: &SupernodeSet,
    basis: &MultiresBasis,
    tree: &PartitionTree,
) -> Result<Vec<BlockColumn>> {
    let plan = Plan::supernodal(coloring, supernodes, basis)?;
    let range = plan.color_blocks[c].clone();
    let width = range.clone().map(|b| plan.blocks[b].members.len()).max().unwrap_or(0);
    if u.len() != width || u.iter().any(|col| col.len() != basis.len()) {
        return Err(Error::DimensionMismatch { expected: width, actual: u.len() });
    }
    let mut out: Vec<BlockColumn> =
        range.clone().map(|b| BlockColumn { supernode: plan.blocks[b].label, rows: Vec::new() }).collect();
    for (offset, t) in plan.scatter_targets(tree, c).into_iter().enumerate() {
        let len = plan.blocks[t].members.len();
        for &i in &plan.blocks[range.start + offset].members {
            out[t - range.start].rows.push((i, (0..len).map(|s| u[s][i]).collect()));
        }
    }
    Ok(out)
}

/// How much of a factor to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truncation {
    Columns(usize),
    Colors(usize),
}

/// Keeps the leading columns of `L`; the result has rank at most the number
/// of kept columns.
pub fn truncate_low_rank(factor: &SparseFactor, keep: Truncation) -> Result<SparseFactor> {
    match keep {
        Truncation::Columns(k) => factor.truncate_columns(k),
        Truncation::Colors(c) => factor.truncate_colors(c),
    }
}
