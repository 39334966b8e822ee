//! Separation-constrained colorings of basis functions and supernodes.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::hash::{Hash, Hasher};

use crate::basis::MultiresBasis;
use crate::geometry::{point_distance, CellRef, PartitionTree, Point};

#[derive(Clone, Debug, PartialEq)]
pub struct Color {
    pub level: usize,
    /// Basis indices (simplicial) or supernode ids (supernodal), ascending.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coloring {
    colors: Vec<Color>,
    rho: f64,
    supernodal: bool,
}

impl Coloring {
    pub fn colors(&self) -> &[Color] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn is_supernodal(&self) -> bool {
        self.supernodal
    }

    /// Number of colors on each level `1..=depth`.
    pub fn per_level_counts(&self, depth: usize) -> Vec<usize> {
        let mut counts = vec![0; depth];
        for c in &self.colors {
            counts[c.level - 1] += 1;
        }
        counts
    }

    /// Stable fingerprint of the color sets.
    pub fn id(&self) -> u64 {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        self.supernodal.hash(&mut hasher);
        for c in &self.colors {
            c.level.hash(&mut hasher);
            c.members.hash(&mut hasher);
        }
        hasher.finish()
    }
}

/// Required separation between members of a level-`k` color.
pub fn separation(rho: f64, h: f64, level: usize) -> f64 {
    2.0 * rho * h.powi(level as i32 - 1)
}

#[derive(PartialEq)]
struct Key(f64, Reverse<usize>);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Greedy farthest-first coloring. Each color starts at the lowest uncolored
/// item and repeatedly takes the item farthest from the color so far, as long
/// as that distance is at least `threshold`. Ties go to the lowest item.
fn greedy_colors(items: &[usize], threshold: f64, dist: impl Fn(usize, usize) -> f64) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = items.to_vec();
    let mut colors = Vec::new();
    let mut key: HashMap<usize, f64> = HashMap::with_capacity(items.len());
    while !remaining.is_empty() {
        key.clear();
        let mut heap = BinaryHeap::with_capacity(remaining.len());
        for &i in &remaining {
            key.insert(i, f64::INFINITY);
            heap.push(Key(f64::INFINITY, Reverse(i)));
        }
        let mut members = Vec::new();
        while let Some(Key(d, Reverse(i))) = heap.pop() {
            if key.get(&i) != Some(&d) {
                continue;
            }
            key.remove(&i);
            members.push(i);
            key.retain(|&j, kj| {
                let dj = dist(i, j);
                if dj < *kj {
                    if dj < threshold {
                        return false;
                    }
                    *kj = dj;
                    heap.push(Key(dj, Reverse(j)));
                }
                true
            });
        }
        members.sort_unstable();
        remaining.retain(|i| members.binary_search(i).is_err());
        colors.push(members);
    }
    colors
}

/// Colors every level of the basis so that members of one level-`k` color
/// have support cells at least `2 rho h^(k-1)` apart.
pub fn color_simplicial(basis: &MultiresBasis, tree: &PartitionTree, rho: f64) -> Coloring {
    assert!(rho > 0.0, "rho must be positive");
    let mut colors = Vec::new();
    for k in 1..=basis.depth() {
        let items: Vec<usize> = basis.level_range(k).collect();
        let threshold = separation(rho, tree.h(), k);
        let dist = |i: usize, j: usize| tree.cell_distance(basis.support_cell(i), basis.support_cell(j));
        for members in greedy_colors(&items, threshold, dist) {
            colors.push(Color { level: k, members });
        }
    }
    Coloring { colors, rho, supernodal: false }
}

#[derive(Clone, Debug)]
pub struct Supernode {
    pub level: usize,
    pub center: Point,
    /// Basis indices in ascending order; position in this list is `eta`.
    pub members: Vec<usize>,
    cells: Vec<CellRef>,
}

impl Supernode {
    /// Distinct support cells of the members.
    pub fn cells(&self) -> &[CellRef] {
        &self.cells
    }
}

#[derive(Clone, Debug)]
pub struct SupernodeSet {
    nodes: Vec<Supernode>,
    member_of: Vec<usize>,
    level_offsets: Vec<usize>,
}

impl SupernodeSet {
    pub fn nodes(&self) -> &[Supernode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &Supernode {
        &self.nodes[id]
    }

    /// Supernode containing basis index `i`.
    pub fn member_of(&self, i: usize) -> usize {
        self.member_of[i]
    }

    pub fn level_range(&self, k: usize) -> std::ops::Range<usize> {
        self.level_offsets[k - 1]..self.level_offsets[k]
    }

    /// Position of basis index `i` inside its supernode.
    pub fn eta(&self, i: usize) -> usize {
        let members = &self.nodes[self.member_of[i]].members;
        members.binary_search(&i).expect("index belongs to its supernode")
    }

    /// One supernode per basis index, with ids equal to basis indices.
    pub fn singletons(basis: &MultiresBasis, tree: &PartitionTree) -> Self {
        let mut nodes = Vec::with_capacity(basis.len());
        let mut level_offsets = vec![0];
        for k in 1..=basis.depth() {
            for i in basis.level_range(k) {
                let cell = basis.support_cell(i);
                nodes.push(Supernode { level: k, center: tree.centroid(cell), members: vec![i], cells: vec![cell] });
            }
            level_offsets.push(nodes.len());
        }
        Self { nodes, member_of: (0..basis.len()).collect(), level_offsets }
    }

    /// Minimum distance between the support cells of two supernodes.
    pub fn distance(&self, tree: &PartitionTree, a: usize, b: usize) -> f64 {
        let mut best = f64::INFINITY;
        for &ca in &self.nodes[a].cells {
            for &cb in &self.nodes[b].cells {
                best = best.min(tree.cell_distance(ca, cb));
                if best == 0.0 {
                    return 0.0;
                }
            }
        }
        best
    }
}

/// Groups the level-`k` basis functions around farthest-first centers chosen
/// among the centroids of their support cells, until every centroid lies
/// within `rho h^k` of a center. Each index joins the nearest center.
pub fn aggregate_supernodes(basis: &MultiresBasis, tree: &PartitionTree, rho: f64) -> SupernodeSet {
    assert!(rho > 0.0, "rho must be positive");
    let dim = tree.points().dim();
    let metric = tree.metric();
    let mut centroid_cache: HashMap<CellRef, Point> = HashMap::new();
    let mut nodes = Vec::new();
    let mut member_of = vec![0; basis.len()];
    let mut level_offsets = vec![0];
    for k in 1..=basis.depth() {
        let items: Vec<usize> = basis.level_range(k).collect();
        let centroids: Vec<Point> = items
            .iter()
            .map(|&i| {
                *centroid_cache.entry(basis.support_cell(i)).or_insert_with(|| tree.centroid(basis.support_cell(i)))
            })
            .collect();
        let radius = rho * tree.h().powi(k as i32);
        let mut centers: Vec<Point> = Vec::new();
        let mut nearest = vec![0usize; items.len()];
        let mut near_dist = vec![f64::INFINITY; items.len()];
        let mut next = 0;
        loop {
            let c = centroids[next];
            let id = centers.len();
            centers.push(c);
            for (t, p) in centroids.iter().enumerate() {
                let d = point_distance(&c, p, dim, metric);
                if d < near_dist[t] {
                    near_dist[t] = d;
                    nearest[t] = id;
                }
            }
            let (far, far_dist) =
                near_dist.iter().enumerate().fold((0, -1.0), |best, (t, &d)| if d > best.1 { (t, d) } else { best });
            if far_dist <= radius {
                break;
            }
            next = far;
        }
        let base = nodes.len();
        for center in centers {
            nodes.push(Supernode { level: k, center, members: Vec::new(), cells: Vec::new() });
        }
        for (t, &i) in items.iter().enumerate() {
            let id = base + nearest[t];
            nodes[id].members.push(i);
            member_of[i] = id;
            let cell = basis.support_cell(i);
            if !nodes[id].cells.contains(&cell) {
                nodes[id].cells.push(cell);
            }
        }
        level_offsets.push(nodes.len());
    }
    SupernodeSet { nodes, member_of, level_offsets }
}

/// Colors supernodes level by level so that all member support cells of two
/// same-colored supernodes are at least `2 rho h^(k-1)` apart.
pub fn color_supernodal(supernodes: &SupernodeSet, tree: &PartitionTree, rho: f64) -> Coloring {
    assert!(rho > 0.0, "rho must be positive");
    let depth = supernodes.level_offsets.len() - 1;
    let mut colors = Vec::new();
    for k in 1..=depth {
        let items: Vec<usize> = supernodes.level_range(k).collect();
        let threshold = separation(rho, tree.h(), k);
        let dist = |a: usize, b: usize| supernodes.distance(tree, a, b);
        for members in greedy_colors(&items, threshold, dist) {
            colors.push(Color { level: k, members });
        }
    }
    Coloring { colors, rho, supernodal: true }
}

/// Verifies that the coloring partitions the basis and respects separation.
pub fn check_coloring(
    coloring: &Coloring,
    basis: &MultiresBasis,
    tree: &PartitionTree,
    supernodes: Option<&SupernodeSet>,
) -> Result<(), String> {
    let mut seen = vec![false; basis.len()];
    let mut last_level = 0;
    for (c, color) in coloring.colors().iter().enumerate() {
        if color.level < last_level {
            return Err(format!("color {c} breaks the coarse-to-fine order"));
        }
        last_level = color.level;
        let indices: Vec<Vec<usize>> = match supernodes {
            Some(sn) => color.members.iter().map(|&s| sn.node(s).members.clone()).collect(),
            None => color.members.iter().map(|&i| vec![i]).collect(),
        };
        for group in &indices {
            for &i in group {
                if basis.level(i) != color.level {
                    return Err(format!("index {i} in color {c} has the wrong level"));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(format!("index {i} colored twice"));
                }
            }
        }
        let threshold = separation(coloring.rho(), tree.h(), color.level);
        for a in 0..indices.len() {
            for b in a + 1..indices.len() {
                for &i in &indices[a] {
                    for &j in &indices[b] {
                        let d = tree.cell_distance(basis.support_cell(i), basis.support_cell(j));
                        if d < threshold {
                            return Err(format!("indices {i} and {j} of color {c} are {d} apart"));
                        }
                    }
                }
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(format!("index {i} is uncolored")),
        None => Ok(()),
    }
}
