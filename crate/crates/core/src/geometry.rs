//! Point clouds, nested partitions and the distances between their cells.
//!
//! Every partition covers the degrees of freedom `0..N` at each level
//! `k = 1..=q`, with the level-`k` cells of diameter roughly `h^k`. The
//! virtual root (level 0) is the whole domain and is never stored.

use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Euclidean,
    /// Wrap-around distance on the unit torus `[0,1)^d`.
    Periodic,
}

/// Distance between two points under `metric`, using the first `dim` axes.
pub fn point_distance(a: &Point, b: &Point, dim: usize, metric: Metric) -> f64 {
    let mut acc = 0.0;
    for axis in 0..dim {
        let mut diff = (a[axis] - b[axis]).abs();
        if metric == Metric::Periodic {
            diff = diff.min(1.0 - diff);
        }
        acc += diff * diff;
    }
    acc.sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<Point>,
    periodic: bool,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<Point>, periodic: bool) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidPoints(format!("dimension {dim} not in 1..=3")));
        }
        if coords.is_empty() {
            return Err(Error::InvalidPoints("empty point set".into()));
        }
        for (i, p) in coords.iter().enumerate() {
            for (axis, &x) in p.iter().enumerate() {
                let inside = if axis < dim { (0.0..1.0).contains(&x) } else { x == 0.0 };
                if !inside {
                    return Err(Error::InvalidPoints(format!(
                        "point {i} has coordinate {x} on axis {axis} outside [0,1)"
                    )));
                }
            }
        }
        Ok(Self { dim, coords, periodic })
    }

    /// Collocation points `i / n` of a regular grid, in [`GridShape`] order.
    pub fn grid(shape: GridShape, periodic: bool) -> Self {
        let coords = (0..shape.len())
            .map(|p| {
                let idx = shape.multi_index(p);
                let mut x = [0.0; 3];
                for axis in 0..shape.dim {
                    x[axis] = idx[axis] as f64 / shape.n as f64;
                }
                x
            })
            .collect();
        Self { dim: shape.dim, coords, periodic }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn metric(&self) -> Metric {
        if self.periodic {
            Metric::Periodic
        } else {
            Metric::Euclidean
        }
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.coords[i]
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        point_distance(&self.coords[i], &self.coords[j], self.dim, self.metric())
    }

    /// Smallest distance between two distinct points (`inf` for a single point).
    pub fn min_spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.min(self.distance(i, j));
            }
        }
        best
    }

    /// Arithmetic mean of the given points.
    pub fn centroid(&self, members: &[usize]) -> Point {
        let mut c = [0.0; 3];
        for &m in members {
            for axis in 0..self.dim {
                c[axis] += self.coords[m][axis];
            }
        }
        let count = members.len().max(1) as f64;
        c.iter_mut().for_each(|x| *x /= count);
        c
    }
}

/// Minimum pairwise distance between two non-empty point index sets.
pub fn set_distance(points: &PointSet, a: &[usize], b: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for &i in a {
        for &j in b {
            let d = points.distance(i, j);
            if d < best {
                best = d;
                if best == 0.0 {
                    return 0.0;
                }
            }
        }
    }
    best
}

/// Shape of an `n^dim` grid. Points are numbered row-major with axis 0 slowest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridShape {
    pub n: usize,
    pub dim: usize,
}

impl GridShape {
    pub fn new(n: usize, dim: usize) -> Self {
        Self { n, dim }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn multi_index(&self, mut p: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for axis in (0..self.dim).rev() {
            idx[axis] = p % self.n;
            p /= self.n;
        }
        idx
    }

    /// Index of the neighbour `offset` steps along `axis`, wrapping around.
    pub fn periodic_neighbor(&self, p: usize, axis: usize, offset: isize) -> usize {
        let mut idx = self.multi_index(p);
        let n = self.n as isize;
        idx[axis] = (idx[axis] as isize + offset).rem_euclid(n) as usize;
        self.index(&idx)
    }
}

/// Reference to a cell: `level == 0` is the virtual root covering everything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellRef {
    pub level: usize,
    pub id: usize,
}

impl CellRef {
    pub const ROOT: CellRef = CellRef { level: 0, id: 0 };

    pub fn new(level: usize, id: usize) -> Self {
        Self { level, id }
    }

    pub fn is_root(&self) -> bool {
        self.level == 0
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub id: usize,
    pub level: usize,
    /// Parent id on level `level - 1`; `None` on level 1 (parent is the root).
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub members: Vec<usize>,
    pub center: Point,
    pub radius: f64,
    lo: Point,
    hi: Point,
}

#[derive(Clone, Debug)]
pub struct PartitionTree {
    points: PointSet,
    h: f64,
    levels: Vec<Vec<Cell>>,
    all: Vec<usize>,
    /// Cells are full boxes of grid points, so bounding-box gaps are exact.
    boxed: bool,
}

/// Dyadic partition of a regular grid with `h = 1/2` and `q = log2(n)`.
pub fn build_regular_partition(grid_dims: &[usize], periodic: bool) -> Result<PartitionTree> {
    let dim = grid_dims.len();
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidParameter(format!("grid must have 1 to 3 axes, got {dim}")));
    }
    let n = grid_dims[0];
    for (axis, &size) in grid_dims.iter().enumerate() {
        if size < 2 || !size.is_power_of_two() || size != n {
            return Err(Error::InvalidGrid { axis, size });
        }
    }
    let q = n.trailing_zeros() as usize;
    let shape = GridShape::new(n, dim);
    let points = PointSet::grid(shape, periodic);

    let mut levels = Vec::with_capacity(q);
    for k in 1..=q {
        let per_axis = 1usize << k;
        let cell_shape = GridShape::new(per_axis, dim);
        let shift = q - k;
        let mut members = vec![Vec::new(); cell_shape.len()];
        for p in 0..shape.len() {
            let idx = shape.multi_index(p);
            let mut cidx = [0; 3];
            for axis in 0..dim {
                cidx[axis] = idx[axis] >> shift;
            }
            members[cell_shape.index(&cidx)].push(p);
        }
        let side = 1usize << shift;
        let cells = members
            .into_iter()
            .enumerate()
            .map(|(id, members)| {
                let cidx = cell_shape.multi_index(id);
                let (mut lo, mut hi) = ([0.0; 3], [0.0; 3]);
                let mut parent_idx = [0; 3];
                for axis in 0..dim {
                    lo[axis] = (cidx[axis] * side) as f64 / n as f64;
                    hi[axis] = (cidx[axis] * side + side - 1) as f64 / n as f64;
                    parent_idx[axis] = cidx[axis] >> 1;
                }
                let parent = (k > 1).then(|| GridShape::new(per_axis / 2, dim).index(&parent_idx));
                let children = if k < q {
                    let child_shape = GridShape::new(per_axis * 2, dim);
                    let mut children: Vec<usize> = (0..1usize << dim)
                        .map(|bits| {
                            let mut c = [0; 3];
                            for axis in 0..dim {
                                c[axis] = 2 * cidx[axis] + ((bits >> (dim - 1 - axis)) & 1);
                            }
                            child_shape.index(&c)
                        })
                        .collect();
                    children.sort_unstable();
                    children
                } else {
                    Vec::new()
                };
                let center = points.centroid(&members);
                let radius = members
                    .iter()
                    .map(|&m| point_distance(&center, points.point(m), dim, Metric::Euclidean))
                    .fold(0.0, f64::max);
                Cell { id, level: k, parent, children, members, center, radius, lo, hi }
            })
            .collect();
        levels.push(cells);
    }
    let all = (0..shape.len()).collect();
    Ok(PartitionTree { points, h: 0.5, levels, all, boxed: true })
}

// Separation threshold (in units of h^k) for farthest-first centers. With
// h <= 1/2 the accumulated assignment distance stays below h^k.
const CENTER_SEPARATION: f64 = 0.5;

/// Nested partition of an arbitrary point cloud from a farthest-first
/// (maximin) ordering. Level-`k` centers are the points selected while the
/// selection distance exceeded `h^k / 2`; the finest level is all singletons.
pub fn build_general_partition(points: PointSet, h: f64, q: usize) -> Result<PartitionTree> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidParameter(format!("refinement ratio h = {h} not in (0,1)")));
    }
    if q == 0 {
        return Err(Error::InvalidParameter("number of levels must be at least 1".into()));
    }
    let n = points.len();
    let threshold = |k: usize| CENTER_SEPARATION * h.powi(k as i32);
    if n >= 2 && q >= 2 {
        let spacing = points.min_spacing();
        if threshold(q - 1) < spacing {
            return Err(Error::TooManyLevels { levels: q, degenerate: q - 1, separation: threshold(q - 1), spacing });
        }
    }

    // Maximin ordering, stopped once the next selection distance drops to the
    // level q-1 threshold.
    let stop = if q >= 2 { threshold(q - 1) } else { f64::INFINITY };
    let mut order = vec![0usize];
    let mut lengths = vec![f64::INFINITY];
    let mut min_dist: Vec<f64> = (0..n).map(|i| points.distance(0, i)).collect();
    loop {
        let mut far = usize::MAX;
        let mut far_dist = -1.0;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > far_dist {
                far_dist = d;
                far = i;
            }
        }
        if far_dist <= stop {
            break;
        }
        order.push(far);
        lengths.push(far_dist);
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min(points.distance(far, i));
        }
    }

    let dim = points.dim();
    let metric = points.metric();
    // Finest level: one cell per point, ids equal to point indices.
    let mut levels: Vec<Vec<Cell>> = vec![Vec::new(); q];
    levels[q - 1] = (0..n)
        .map(|i| Cell {
            id: i,
            level: q,
            parent: None,
            children: Vec::new(),
            members: vec![i],
            center: *points.point(i),
            radius: 0.0,
            lo: *points.point(i),
            hi: *points.point(i),
        })
        .collect();

    for k in (1..q).rev() {
        let centers: Vec<usize> =
            order.iter().zip(&lengths).take_while(|(_, &l)| l > threshold(k)).map(|(&p, _)| p).collect();
        let mut cells: Vec<Cell> = centers
            .iter()
            .enumerate()
            .map(|(id, &c)| Cell {
                id,
                level: k,
                parent: None,
                children: Vec::new(),
                members: Vec::new(),
                center: *points.point(c),
                radius: 0.0,
                lo: [0.0; 3],
                hi: [0.0; 3],
            })
            .collect();
        let children = &mut levels[k];
        for child in children.iter_mut() {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (id, cell) in cells.iter().enumerate() {
                let d = point_distance(&child.center, &cell.center, dim, metric);
                if d < best_dist {
                    best_dist = d;
                    best = id;
                }
            }
            child.parent = Some(best);
            cells[best].children.push(child.id);
            cells[best].members.extend_from_slice(&child.members);
        }
        levels[k - 1] = cells;
    }

    for cells in levels.iter_mut() {
        for cell in cells.iter_mut() {
            cell.members.sort_unstable();
            cell.radius = cell
                .members
                .iter()
                .map(|&m| point_distance(&cell.center, points.point(m), dim, metric))
                .fold(0.0, f64::max);
            let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
            for &m in &cell.members {
                for axis in 0..3 {
                    lo[axis] = lo[axis].min(points.point(m)[axis]);
                    hi[axis] = hi[axis].max(points.point(m)[axis]);
                }
            }
            cell.lo = lo;
            cell.hi = hi;
        }
    }
    let all = (0..n).collect();
    Ok(PartitionTree { points, h, levels, all, boxed: false })
}

/// Gap between two coordinate intervals along one axis.
fn interval_gap(alo: f64, ahi: f64, blo: f64, bhi: f64, periodic: bool) -> f64 {
    let gap = |shift: f64| (blo + shift - ahi).max(alo - bhi - shift).max(0.0);
    if periodic {
        gap(0.0).min(gap(1.0)).min(gap(-1.0))
    } else {
        gap(0.0)
    }
}

impl PartitionTree {
    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of levels `q`.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn metric(&self) -> Metric {
        self.points.metric()
    }

    /// Cells on level `k` (1-based).
    pub fn cells(&self, level: usize) -> &[Cell] {
        &self.levels[level - 1]
    }

    pub fn cell(&self, r: CellRef) -> &Cell {
        &self.levels[r.level - 1][r.id]
    }

    /// Children of `r`; for the root these are the level-1 cells.
    pub fn children(&self, r: CellRef) -> Vec<CellRef> {
        if r.is_root() {
            (0..self.levels[0].len()).map(|id| CellRef::new(1, id)).collect()
        } else {
            self.cell(r).children.iter().map(|&id| CellRef::new(r.level + 1, id)).collect()
        }
    }

    pub fn members(&self, r: CellRef) -> &[usize] {
        if r.is_root() {
            &self.all
        } else {
            &self.cell(r).members
        }
    }

    pub fn centroid(&self, r: CellRef) -> Point {
        self.points.centroid(self.members(r))
    }

    /// Minimum distance between member points of two cells.
    pub fn cell_distance(&self, a: CellRef, b: CellRef) -> f64 {
        if a.is_root() || b.is_root() || a == b {
            return 0.0;
        }
        if self.boxed {
            return self.box_gap(a, b);
        }
        let mut best = f64::INFINITY;
        self.descend(a, b, &mut best);
        best
    }

    fn box_gap(&self, a: CellRef, b: CellRef) -> f64 {
        let (ca, cb) = (self.cell(a), self.cell(b));
        let periodic = self.points.is_periodic();
        let mut acc = 0.0;
        for axis in 0..self.points.dim() {
            let g = interval_gap(ca.lo[axis], ca.hi[axis], cb.lo[axis], cb.hi[axis], periodic);
            acc += g * g;
        }
        acc.sqrt()
    }

    // Branch and bound over the subtrees below `a` and `b`, pruning pairs whose
    // bounding boxes are already farther apart than the best pair found.
    fn descend(&self, a: CellRef, b: CellRef, best: &mut f64) {
        if *best == 0.0 || self.box_gap(a, b) >= *best {
            return;
        }
        let (ca, cb) = (self.cell(a), self.cell(b));
        if ca.members.len() == 1 && cb.members.len() == 1 {
            *best = best.min(self.points.distance(ca.members[0], cb.members[0]));
            return;
        }
        let split_a = cb.members.len() == 1 || (ca.members.len() > 1 && a.level <= b.level);
        let mut pairs: Vec<(f64, CellRef, CellRef)> = if split_a {
            self.children(a).into_iter().map(|c| (self.box_gap(c, b), c, b)).collect()
        } else {
            self.children(b).into_iter().map(|c| (self.box_gap(a, c), a, c)).collect()
        };
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (_, x, y) in pairs {
            self.descend(x, y, best);
        }
    }

    /// Checks nesting, cover and the radius bound `h^k (1 + slack)`.
    pub fn check_invariants(&self, slack: f64) -> std::result::Result<(), String> {
        let n = self.points.len();
        let metric = self.metric();
        let dim = self.points.dim();
        for (li, cells) in self.levels.iter().enumerate() {
            let k = li + 1;
            let mut seen = vec![false; n];
            for cell in cells {
                for &m in &cell.members {
                    if std::mem::replace(&mut seen[m], true) {
                        return Err(format!("point {m} in two level-{k} cells"));
                    }
                    let d = point_distance(&cell.center, self.points.point(m), dim, metric);
                    if d > cell.radius * (1.0 + 1e-12) + 1e-15 {
                        return Err(format!("point {m} outside radius of cell {}/{k}", cell.id));
                    }
                }
                if cell.radius > self.h.powi(k as i32) * (1.0 + slack) {
                    return Err(format!(
                        "cell {}/{k} radius {} exceeds bound {}",
                        cell.id,
                        cell.radius,
                        self.h.powi(k as i32) * (1.0 + slack)
                    ));
                }
                if k < self.depth() {
                    let mut union: Vec<usize> =
                        cell.children.iter().flat_map(|&c| self.levels[k][c].members.iter().copied()).collect();
                    union.sort_unstable();
                    let mut own = cell.members.clone();
                    own.sort_unstable();
                    if union != own {
                        return Err(format!("cell {}/{k} is not the union of its children", cell.id));
                    }
                    for &c in &cell.children {
                        if self.levels[k][c].parent != Some(cell.id) {
                            return Err(format!("child {c} of cell {}/{k} has wrong parent", cell.id));
                        }
                    }
                }
            }
            if let Some(missing) = seen.iter().position(|&s| !s) {
                return Err(format!("point {missing} not covered on level {k}"));
            }
        }
        Ok(())
    }
}
