//! Sparse lower-triangular factors `L` with `L L^T ~ Theta`, their queries
//! and a binary container.
//!
//! Columns and rows of `L` live in the coloring order; every public query
//! takes and returns vectors indexed by basis function.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::MultiresBasis;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"OPFACT01";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Provenance {
    pub rho: f64,
    pub coloring_id: u64,
    pub supernodal: bool,
    /// Oracle calls spent on the recovery.
    pub matvecs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseFactor {
    n: usize,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    values: Vec<f64>,
    row_ptr: Vec<usize>,
    row_cols: Vec<u32>,
    row_values: Vec<f64>,
    order: Vec<usize>,
    position: Vec<usize>,
    color_ptr: Vec<usize>,
    provenance: Provenance,
}

impl SparseFactor {
    /// Assembles a factor from CSC data in position space. `order[p]` is the
    /// basis index at position `p`; `color_ptr` holds the first column of
    /// every color followed by `n`.
    pub fn from_parts(
        n: usize,
        col_ptr: Vec<usize>,
        rows: Vec<u32>,
        values: Vec<f64>,
        order: Vec<usize>,
        color_ptr: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::FactorFormat(msg));
        if order.len() != n {
            return bad(format!("ordering has {} entries for n = {n}", order.len()));
        }
        let mut position = vec![usize::MAX; n];
        for (p, &i) in order.iter().enumerate() {
            if i >= n || position[i] != usize::MAX {
                return bad(format!("ordering is not a permutation at position {p}"));
            }
            position[i] = p;
        }
        let ncols = col_ptr.len().checked_sub(1).ok_or_else(|| Error::FactorFormat("empty column pointer".into()))?;
        if ncols > n || col_ptr[0] != 0 || col_ptr[ncols] != rows.len() || rows.len() != values.len() {
            return bad("inconsistent column pointers".into());
        }
        for c in 0..ncols {
            let (lo, hi) = (col_ptr[c], col_ptr[c + 1]);
            if hi <= lo || rows[lo] as usize != c {
                return bad(format!("column {c} does not start with its diagonal"));
            }
            if !(values[lo] > 0.0) {
                return bad(format!("column {c} has nonpositive diagonal {}", values[lo]));
            }
            for k in lo + 1..hi {
                if rows[k] <= rows[k - 1] || rows[k] as usize >= n {
                    return bad(format!("column {c} has unsorted or out-of-range rows"));
                }
            }
        }
        if color_ptr.first() != Some(&0) || color_ptr.last() != Some(&n) || color_ptr.windows(2).any(|w| w[0] >= w[1]) {
            return bad("invalid color offsets".into());
        }

        let mut counts = vec![0usize; n + 1];
        for &r in &rows {
            counts[r as usize + 1] += 1;
        }
        for r in 0..n {
            counts[r + 1] += counts[r];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut row_cols = vec![0u32; rows.len()];
        let mut row_values = vec![0.0; rows.len()];
        for c in 0..ncols {
            for k in col_ptr[c]..col_ptr[c + 1] {
                let r = rows[k] as usize;
                row_cols[next[r]] = c as u32;
                row_values[next[r]] = values[k];
                next[r] += 1;
            }
        }
        Ok(Self { n, col_ptr, rows, values, row_ptr, row_cols, row_values, order, position, color_ptr, provenance })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.ncols() == self.n
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Basis index at each position.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Position of each basis index.
    pub fn position(&self) -> &[usize] {
        &self.position
    }

    /// First column of every color, followed by `n`.
    pub fn color_ptr(&self) -> &[usize] {
        &self.color_ptr
    }

    pub fn ncolors(&self) -> usize {
        self.color_ptr.len() - 1
    }

    /// Rows (positions) and values of column `c`.
    pub fn column(&self, c: usize) -> (&[u32], &[f64]) {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        (&self.rows[range.clone()], &self.values[range])
    }

    /// Columns and values of row `r` (a position).
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.row_cols[range.clone()], &self.row_values[range])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.ncols()).map(|c| self.values[self.col_ptr[c]]).collect()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, actual: v.len() });
        }
        Ok(())
    }

    fn require_complete(&self) -> Result<()> {
        if !self.is_complete() {
            return Err(Error::TruncatedFactor { ncols: self.ncols(), n: self.n });
        }
        Ok(())
    }

    fn to_positions(&self, x: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&i| x[i]).collect()
    }

    fn positions_to_basis(&self, z: &[f64]) -> Vec<f64> {
        self.position.iter().map(|&p| z[p]).collect()
    }

    /// `L (L^T x)`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let xp = self.to_positions(x);
        let mut z = vec![0.0; self.n];
        for c in 0..self.ncols() {
            let (rows, vals) = self.column(c);
            let y: f64 = rows.iter().zip(vals).map(|(&r, &v)| v * xp[r as usize]).sum();
            for (&r, &v) in rows.iter().zip(vals) {
                z[r as usize] += v * y;
            }
        }
        Ok(self.positions_to_basis(&z))
    }

    /// `L^{-T} (L^{-1} b)` by two sparse triangular solves.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b)?;
        self.require_complete()?;
        let mut z = self.to_positions(b);
        for c in 0..self.n {
            let (rows, vals) = self.column(c);
            z[c] /= vals[0];
            let zc = z[c];
            for (&r, &v) in rows[1..].iter().zip(&vals[1..]) {
                z[r as usize] -= v * zc;
            }
        }
        for c in (0..self.n).rev() {
            let (rows, vals) = self.column(c);
            let s: f64 = rows[1..].iter().zip(&vals[1..]).map(|(&r, &v)| v * z[r as usize]).sum();
            z[c] = (z[c] - s) / vals[0];
        }
        Ok(self.positions_to_basis(&z))
    }

    /// `(L L^T)_{ij}` for basis indices `i`, `j`, from two sparse rows.
    pub fn entry(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.n || j >= self.n {
            return Err(Error::InvalidParameter(format!("entry ({i}, {j}) outside {}x{}", self.n, self.n)));
        }
        let (ci, vi) = self.row(self.position[i]);
        let (cj, vj) = self.row(self.position[j]);
        let (mut a, mut b, mut sum) = (0, 0, 0.0);
        while a < ci.len() && b < cj.len() {
            match ci[a].cmp(&cj[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    sum += vi[a] * vj[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        Ok(sum)
    }

    /// `log det(L L^T) = 2 sum log L_cc`.
    pub fn logdet(&self) -> Result<f64> {
        self.require_complete()?;
        Ok(2.0 * self.diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// `L z` for a standard normal `z` drawn from a generator seeded by `seed`.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..self.ncols()).map(|_| StandardNormal.sample(&mut rng)).collect();
        self.apply_factor(&z)
    }

    /// `L z` for `z` indexed by column, returned in basis coordinates.
    pub fn apply_factor(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (c, &zc) in z.iter().enumerate().take(self.ncols()) {
            let (rows, vals) = self.column(c);
            for (&r, &v) in rows.iter().zip(vals) {
                out[r as usize] += v * zc;
            }
        }
        self.positions_to_basis(&out)
    }

    /// The first `k` columns.
    pub fn truncate_columns(&self, k: usize) -> Result<Self> {
        if k > self.ncols() {
            return Err(Error::InvalidParameter(format!("cannot keep {k} of {} columns", self.ncols())));
        }
        let nnz = self.col_ptr[k];
        Self::from_parts(
            self.n,
            self.col_ptr[..=k].to_vec(),
            self.rows[..nnz].to_vec(),
            self.values[..nnz].to_vec(),
            self.order.clone(),
            self.color_ptr.clone(),
            self.provenance,
        )
    }

    /// The columns of the first `colors` colors.
    pub fn truncate_colors(&self, colors: usize) -> Result<Self> {
        if colors > self.ncolors() {
            return Err(Error::InvalidParameter(format!("cannot keep {colors} of {} colors", self.ncolors())));
        }
        self.truncate_columns(self.color_ptr[colors].min(self.ncols()))
    }

    /// Dense `L L^T` in basis coordinates (small problems only).
    pub fn dense_product(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for c in 0..self.ncols() {
            let (rows, vals) = self.column(c);
            for (&r, &v) in rows.iter().zip(vals) {
                let i = self.order[r as usize];
                for (&s, &w) in rows.iter().zip(vals) {
                    out[i][self.order[s as usize]] += v * w;
                }
            }
        }
        out
    }

    /// Dense `L` in position coordinates (small problems only).
    pub fn dense_positions(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols()]; self.n];
        for c in 0..self.ncols() {
            let (rows, vals) = self.column(c);
            for (&r, &v) in rows.iter().zip(vals) {
                out[r as usize][c] = v;
            }
        }
        out
    }

    /// `W P L`: the factor expressed in the original degrees of freedom, so
    /// that `F F^T ~ A^{-1}`.
    pub fn to_original_basis(&self, basis: &MultiresBasis) -> Result<OriginalFactor> {
        if basis.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, actual: basis.len() });
        }
        let nrows = basis.n();
        let mut col_ptr = vec![0];
        let mut rows = Vec::new();
        let mut values = Vec::new();
        let mut acc = vec![0.0; nrows];
        let mut touched = Vec::new();
        for c in 0..self.ncols() {
            let (lr, lv) = self.column(c);
            for (&r, &v) in lr.iter().zip(lv) {
                let (br, bv) = basis.column(self.order[r as usize]);
                for (&q, &w) in br.iter().zip(bv) {
                    if acc[q] == 0.0 {
                        touched.push(q);
                    }
                    acc[q] += v * w;
                }
            }
            touched.sort_unstable();
            touched.dedup();
            for &q in &touched {
                if acc[q] != 0.0 {
                    rows.push(q);
                    values.push(acc[q]);
                }
                acc[q] = 0.0;
            }
            touched.clear();
            col_ptr.push(rows.len());
        }
        Ok(OriginalFactor { nrows, col_ptr, rows, values })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let p = &self.provenance;
        w.write_all(MAGIC)?;
        for v in [self.n, self.ncols(), self.nnz(), self.ncolors()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&p.rho.to_bits().to_le_bytes())?;
        w.write_all(&p.coloring_id.to_le_bytes())?;
        w.write_all(&u64::from(p.supernodal).to_le_bytes())?;
        w.write_all(&(p.matvecs as u64).to_le_bytes())?;
        for v in self.order.iter().chain(&self.color_ptr).chain(&self.col_ptr) {
            w.write_all(&(*v as u64).to_le_bytes())?;
        }
        for r in &self.rows {
            w.write_all(&r.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::FactorFormat("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::FactorFormat("bad magic".into()));
        }
        let read_u64 = |r: &mut dyn Read| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| Error::FactorFormat("unexpected end of file".into()))?;
            Ok(u64::from_le_bytes(b))
        };
        let n = read_u64(r)? as usize;
        let ncols = read_u64(r)? as usize;
        let nnz = read_u64(r)? as usize;
        let ncolors = read_u64(r)? as usize;
        let rho = f64::from_bits(read_u64(r)?);
        let coloring_id = read_u64(r)?;
        let supernodal = match read_u64(r)? {
            0 => false,
            1 => true,
            other => return Err(Error::FactorFormat(format!("bad supernodal flag {other}"))),
        };
        let matvecs = read_u64(r)? as usize;
        if ncols > n || ncolors > n || nnz > n.saturating_mul(n) {
            return Err(Error::FactorFormat("header sizes are inconsistent".into()));
        }
        let read_vec = |r: &mut dyn Read, len: usize| -> Result<Vec<usize>> {
            (0..len).map(|_| read_u64(r).map(|v| v as usize)).collect()
        };
        let order = read_vec(r, n)?;
        let color_ptr = read_vec(r, ncolors + 1)?;
        let col_ptr = read_vec(r, ncols + 1)?;
        let mut buf = vec![0u8; nnz * 4];
        r.read_exact(&mut buf).map_err(|_| Error::FactorFormat("unexpected end of file".into()))?;
        let rows = buf.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
        let mut buf = vec![0u8; nnz * 8];
        r.read_exact(&mut buf).map_err(|_| Error::FactorFormat("unexpected end of file".into()))?;
        let values = buf.chunks_exact(8).map(|b| f64::from_bits(u64::from_le_bytes(b.try_into().unwrap()))).collect();
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::FactorFormat("trailing bytes".into()));
        }
        Self::from_parts(
            n,
            col_ptr,
            rows,
            values,
            order,
            color_ptr,
            Provenance { rho, coloring_id, supernodal, matvecs },
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }
}

/// Column-compressed `W P L` over the original degrees of freedom.
#[derive(Clone, Debug)]
pub struct OriginalFactor {
    nrows: usize,
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    values: Vec<f64>,
}

impl OriginalFactor {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    /// `F (F^T x)`, an approximation of `A^{-1} x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.nrows {
            return Err(Error::DimensionMismatch { expected: self.nrows, actual: x.len() });
        }
        let mut out = vec![0.0; self.nrows];
        for c in 0..self.ncols() {
            let range = self.col_ptr[c]..self.col_ptr[c + 1];
            let y: f64 =
                self.rows[range.clone()].iter().zip(&self.values[range.clone()]).map(|(&r, &v)| v * x[r]).sum();
            for (&r, &v) in self.rows[range.clone()].iter().zip(&self.values[range]) {
                out[r] += v * y;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn provenance() -> Provenance {
        Provenance { rho: 3.0, coloring_id: 7, supernodal: false, matvecs: 2 }
    }

    /// `[[2, 0], [1, sqrt 2]]` with the identity ordering.
    fn two_by_two() -> SparseFactor {
        SparseFactor::from_parts(
            2,
            vec![0, 2, 3],
            vec![0, 1, 1],
            vec![2.0, 1.0, 2f64.sqrt()],
            vec![0, 1],
            vec![0, 1, 2],
            provenance(),
        )
        .unwrap()
    }

    fn identity(n: usize) -> SparseFactor {
        SparseFactor::from_parts(
            n,
            (0..=n).collect(),
            (0..n as u32).collect(),
            vec![1.0; n],
            (0..n).rev().collect(),
            vec![0, n],
            provenance(),
        )
        .unwrap()
    }

    #[test]
    fn identity_queries() {
        let l = identity(4);
        let x = vec![1.0, -2.0, 3.0, 0.5];
        assert_eq!(l.matvec(&x).unwrap(), x);
        assert_eq!(l.solve(&x).unwrap(), x);
        assert_eq!(l.logdet().unwrap(), 0.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(l.entry(i, j).unwrap(), f64::from(i == j));
            }
        }
    }

    #[test]
    fn two_by_two_queries() {
        let l = two_by_two();
        let y = l.matvec(&[1.0, 0.0]).unwrap();
        assert!((y[0] - 4.0).abs() < 1e-15 && (y[1] - 2.0).abs() < 1e-15);
        assert!((l.entry(1, 1).unwrap() - 3.0).abs() < 1e-15);
        assert!((l.logdet().unwrap() - 8f64.ln()).abs() < 1e-15);
        let x = [0.3, -1.7];
        let back = l.solve(&l.matvec(&x).unwrap()).unwrap();
        assert!((back[0] - x[0]).abs() < 1e-14 && (back[1] - x[1]).abs() < 1e-14);
    }

    #[test]
    fn diagonal_factor_logdet() {
        let l = SparseFactor::from_parts(
            2,
            vec![0, 1, 2],
            vec![0, 1],
            vec![2.0, 2f64.sqrt()],
            vec![0, 1],
            vec![0, 2],
            provenance(),
        )
        .unwrap();
        assert!((l.logdet().unwrap() - 3.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn truncation() {
        let l = two_by_two();
        assert_eq!(l.truncate_columns(2).unwrap(), l);
        let zero = l.truncate_columns(0).unwrap();
        assert_eq!(zero.matvec(&[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(zero.logdet(), Err(Error::TruncatedFactor { ncols: 0, n: 2 })));
        let one = l.truncate_colors(1).unwrap();
        assert_eq!(one.ncols(), 1);
        assert!((one.entry(1, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!(l.truncate_columns(3).is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let l = two_by_two();
        let mut bytes = Vec::new();
        l.write_to(&mut bytes).unwrap();
        let back = SparseFactor::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, l);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let l = two_by_two();
        let mut bytes = Vec::new();
        l.write_to(&mut bytes).unwrap();
        assert!(SparseFactor::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(SparseFactor::read_from(&mut longer.as_slice()).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SparseFactor::read_from(&mut bad.as_slice()), Err(Error::FactorFormat(_))));
    }

    #[test]
    fn malformed_parts_are_rejected() {
        // Diagonal must come first and be positive.
        assert!(SparseFactor::from_parts(
            2,
            vec![0, 1, 2],
            vec![1, 1],
            vec![1.0, 1.0],
            vec![0, 1],
            vec![0, 2],
            provenance()
        )
        .is_err());
        assert!(
            SparseFactor::from_parts(1, vec![0, 1], vec![0], vec![-1.0], vec![0], vec![0, 1], provenance()).is_err()
        );
        assert!(SparseFactor::from_parts(
            2,
            vec![0, 1, 2],
            vec![0, 1],
            vec![1.0, 1.0],
            vec![0, 0],
            vec![0, 2],
            provenance()
        )
        .is_err());
    }
}
