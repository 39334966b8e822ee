use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointSet};

use super::{check_len, SolverOracle};

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric sparse matrix read from a Matrix Market file; holds the lower
/// triangle `(row >= col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix {
    pub n: usize,
    pub lower: BTreeMap<(usize, usize), f64>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Reads a real `coordinate` Matrix Market file (`symmetric` or `general`).
/// General files must be symmetric to a relative `1e-12`; repeated entries
/// are summed.
pub fn read_matrix_market(path: &Path) -> Result<SymmetricMatrix> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(path, 1, "missing %%MatrixMarket matrix header"));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(path, 1, format!("unsupported format '{}'", tokens[2])));
    }
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(parse_err(path, 1, format!("unsupported field '{}'", tokens[3])));
    }
    let symmetric = match tokens[4].as_str() {
        "symmetric" => true,
        "general" => false,
        other => return Err(parse_err(path, 1, format!("unsupported symmetry '{other}'"))),
    };

    let mut size = None;
    let mut full: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut count = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match size {
            None => {
                let parsed: Vec<usize> = fields
                    .iter()
                    .map(|f| f.parse().map_err(|_| parse_err(path, lineno, format!("bad size field '{f}'"))))
                    .collect::<Result<_>>()?;
                if parsed.len() != 3 {
                    return Err(parse_err(path, lineno, "size line needs rows, columns and entries"));
                }
                if parsed[0] != parsed[1] || parsed[0] == 0 {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("matrix is {}x{}, expected square", parsed[0], parsed[1]),
                    ));
                }
                size = Some((parsed[0], parsed[2]));
            }
            Some((n, _)) => {
                if fields.len() != 3 {
                    return Err(parse_err(path, lineno, "entry needs row, column and value"));
                }
                let index = |f: &str| -> Result<usize> {
                    let i: usize = f.parse().map_err(|_| parse_err(path, lineno, format!("bad index '{f}'")))?;
                    if i == 0 || i > n {
                        return Err(parse_err(path, lineno, format!("index {i} outside 1..={n}")));
                    }
                    Ok(i - 1)
                };
                let (r, c) = (index(fields[0])?, index(fields[1])?);
                let v: f64 = fields[2]
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| parse_err(path, lineno, format!("bad value '{}'", fields[2])))?;
                if symmetric && r < c {
                    return Err(parse_err(path, lineno, "symmetric file lists an upper-triangle entry"));
                }
                *full.entry((r, c)).or_insert(0.0) += v;
                count += 1;
            }
        }
    }
    let (n, declared) = size.ok_or_else(|| parse_err(path, 1, "missing size line"))?;
    if count != declared {
        return Err(parse_err(path, 1, format!("header declares {declared} entries, found {count}")));
    }

    let lower = if symmetric {
        full
    } else {
        let scale = full.values().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut lower = BTreeMap::new();
        for (&(r, c), &v) in &full {
            let mirror = full.get(&(c, r)).copied().unwrap_or(0.0);
            let diff = (v - mirror).abs();
            if diff > SYMMETRY_TOL * scale {
                return Err(Error::NotSymmetric { row: r, col: c, diff });
            }
            if r >= c {
                lower.insert((r, c), v);
            } else if !full.contains_key(&(c, r)) {
                lower.insert((c, r), v);
            }
        }
        lower
    };
    Ok(SymmetricMatrix { n, lower })
}

impl SymmetricMatrix {
    fn to_sparse(&self) -> Result<SparseColMat<usize, f64>> {
        let mut t = Vec::with_capacity(2 * self.lower.len());
        for (&(r, c), &v) in &self.lower {
            t.push(Triplet::new(r, c, v));
            if r != c {
                t.push(Triplet::new(c, r, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &t)
            .map_err(|e| Error::InvalidParameter(format!("matrix assembly failed: {e:?}")))
    }
}

/// Oracle solving with a sparse SPD matrix loaded from disk.
pub struct MatrixFileOracle {
    n: usize,
    path: PathBuf,
    factor: Llt<usize, f64>,
}

impl MatrixFileOracle {
    pub fn from_matrix(matrix: &SymmetricMatrix, path: PathBuf) -> Result<Self> {
        let a = matrix.to_sparse()?;
        let factor =
            a.sp_cholesky(Side::Lower).map_err(|e| Error::NotPositiveDefinite(format!("{}: {e:?}", path.display())))?;
        Ok(Self { n: matrix.n, path, factor })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn load_matrix_oracle(path: &Path) -> Result<MatrixFileOracle> {
    let matrix = read_matrix_market(path)?;
    MatrixFileOracle::from_matrix(&matrix, path.to_path_buf())
}

impl SolverOracle for MatrixFileOracle {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len(self, b)?;
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.factor.solve(&rhs);
        Ok((0..self.n).map(|i| x[(i, 0)]).collect())
    }
}

/// Reads one whitespace-separated row `x [y] [z]` per degree of freedom and
/// rescales the cloud into `[0,1)^d` with a common factor for all axes.
pub fn load_coordinates(path: &Path, n: usize) -> Result<PointSet> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('%') {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, idx + 1, format!("bad coordinate '{f}'")))
            })
            .collect::<Result<_>>()?;
        if !(1..=3).contains(&row.len()) {
            return Err(parse_err(path, idx + 1, format!("{} coordinates, expected 1 to 3", row.len())));
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(path, idx + 1, "rows have different numbers of coordinates"));
            }
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(parse_err(path, 1, format!("{} coordinate rows for {n} unknowns", rows.len())));
    }
    let dim = rows[0].len();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for row in &rows {
        for a in 0..dim {
            lo[a] = lo[a].min(row[a]);
            hi[a] = hi[a].max(row[a]);
        }
    }
    let span = (0..dim).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let scale = if span > 0.0 { 1.0 / (span * (1.0 + 1e-9)) } else { 0.0 };
    let coords: Vec<Point> = rows
        .iter()
        .map(|row| {
            let mut p = [0.0; 3];
            for a in 0..dim {
                p[a] = ((row[a] - lo[a]) * scale).min(1.0 - f64::EPSILON);
            }
            p
        })
        .collect();
    PointSet::new(dim, coords, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn identity_file() {
        let f = write("%%MatrixMarket matrix coordinate real symmetric\n3 3 3\n1 1 1\n2 2 1\n3 3 1\n");
        let o = load_matrix_oracle(f.path()).unwrap();
        assert_eq!(o.apply(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn two_by_two_solve() {
        let f = write("%%MatrixMarket matrix coordinate real symmetric\n% comment\n2 2 3\n1 1 4\n2 1 2\n2 2 3\n");
        let o = load_matrix_oracle(f.path()).unwrap();
        let u = o.apply(&[4.0, 2.0]).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-14 && u[1].abs() < 1e-14);
    }

    #[test]
    fn general_symmetric_is_accepted() {
        let f = write("%%MatrixMarket matrix coordinate real general\n2 2 4\n1 1 4\n2 1 2\n1 2 2\n2 2 3\n");
        let m = read_matrix_market(f.path()).unwrap();
        assert_eq!(m.lower.len(), 3);
        assert_eq!(m.lower[&(1, 0)], 2.0);
    }

    #[test]
    fn unsymmetric_is_rejected() {
        let f = write("%%MatrixMarket matrix coordinate real general\n2 2 4\n1 1 4\n2 1 2\n1 2 1\n2 2 3\n");
        assert!(matches!(read_matrix_market(f.path()), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn indefinite_is_rejected() {
        let f = write("%%MatrixMarket matrix coordinate real symmetric\n2 2 3\n1 1 1\n2 1 2\n2 2 1\n");
        assert!(matches!(load_matrix_oracle(f.path()), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn malformed_files_name_the_line() {
        let f = write("%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n3 1 1\n");
        match read_matrix_market(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = write("%%MatrixMarket matrix array real general\n2 2\n");
        assert!(matches!(read_matrix_market(f.path()), Err(Error::Parse { line: 1, .. })));
        let f = write("%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1\n");
        assert!(read_matrix_market(f.path()).is_err());
    }

    #[test]
    fn coordinates_are_rescaled() {
        let f = write("0 0\n2 0\n2 1\n");
        let pts = load_coordinates(f.path(), 3).unwrap();
        assert_eq!(pts.dim(), 2);
        assert!(pts.point(1)[0] < 1.0 && pts.point(1)[0] > 0.999);
        assert!((pts.point(2)[1] - 0.5).abs() < 1e-8);
        assert!(load_coordinates(f.path(), 4).is_err());
        let bad = write("0 0\n1\n");
        assert!(load_coordinates(bad.path(), 2).is_err());
    }
}
