//! Compressed sparse column storage for complex matrices.

use crate::{Error, Result, C64};
use nalgebra::DMatrix;
use std::fmt::Write as _;

/// Largest dimension accepted by dense conversions.
pub const DENSE_LIMIT: usize = 4096;

/// Anything that can multiply a vector.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = A x`; `y` is overwritten.
    fn apply(&self, x: &[C64], y: &mut [C64]);
}

/// General complex sparse matrix in CSC form with sorted row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<C64>,
}

impl CscMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// entries that end up exactly zero are dropped.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, C64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        for &(r, c, _) in &t {
            if r >= nrows || c >= ncols {
                return Err(Error::InvalidParameter(format!(
                    "entry ({r}, {c}) outside a {nrows}x{ncols} matrix"
                )));
            }
        }
        t.sort_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_idx = Vec::with_capacity(t.len());
        let mut values: Vec<C64> = Vec::with_capacity(t.len());
        let mut cols = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            if cols.last() == Some(&c) && row_idx.last() == Some(&r) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                cols.push(c);
                values.push(v);
            }
        }
        let mut out_rows = Vec::with_capacity(row_idx.len());
        let mut out_vals = Vec::with_capacity(row_idx.len());
        for ((r, c), v) in row_idx.into_iter().zip(cols).zip(values) {
            if v != C64::new(0.0, 0.0) {
                col_ptr[c + 1] += 1;
                out_rows.push(r);
                out_vals.push(v);
            }
        }
        for j in 0..ncols {
            col_ptr[j + 1] += col_ptr[j];
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx: out_rows,
            values: out_vals,
        })
    }

    /// Builds from per-column lists already sorted by row with no duplicates.
    pub(crate) fn from_sorted_columns(nrows: usize, columns: Vec<Vec<(usize, C64)>>) -> Self {
        let ncols = columns.len();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        col_ptr.push(0);
        let nnz = columns.iter().map(Vec::len).sum();
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for col in columns {
            for (r, v) in col {
                debug_assert!(r < nrows);
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Converts a dense matrix, keeping every nonzero entry.
    pub fn from_dense(a: &DMatrix<C64>) -> Self {
        let columns = (0..a.ncols())
            .map(|j| {
                (0..a.nrows())
                    .filter(|&i| a[(i, j)] != C64::new(0.0, 0.0))
                    .map(|i| (i, a[(i, j)]))
                    .collect()
            })
            .collect();
        Self::from_sorted_columns(a.nrows(), columns)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[C64]) {
        let (s, e) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[s..e], &self.values[s..e])
    }

    /// Column `j` as `(row, value)` pairs.
    pub fn col_iter(&self, j: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (r, v) = self.col(j);
        r.iter().copied().zip(v.iter().copied())
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> C64 {
        let (rows, vals) = self.col(j);
        match rows.binary_search(&i) {
            Ok(p) => vals[p],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.col(j).0.binary_search(&i).is_ok()
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    fn mul_vec_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        y.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for (j, &xj) in x.iter().enumerate() {
            if xj == C64::new(0.0, 0.0) {
                continue;
            }
            let (rows, vals) = self.col(j);
            for (&r, &v) in rows.iter().zip(vals) {
                y[r] += v * xj;
            }
        }
    }

    /// `A^H x`.
    pub fn adjoint_mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.nrows);
        (0..self.ncols).map(|j| self.col_dot(j, x)).collect()
    }

    /// `a_j^H x` for column `j`.
    pub fn col_dot(&self, j: usize, x: &[C64]) -> C64 {
        let (rows, vals) = self.col(j);
        rows.iter()
            .zip(vals)
            .fold(C64::new(0.0, 0.0), |acc, (&r, v)| acc + v.conj() * x[r])
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut columns: Vec<Vec<(usize, C64)>> = vec![Vec::new(); self.nrows];
        for j in 0..self.ncols {
            for (r, v) in self.col_iter(j) {
                columns[r].push((j, v.conj()));
            }
        }
        Self::from_sorted_columns(self.ncols, columns)
    }

    /// Dense copy, refused above [`DENSE_LIMIT`].
    pub fn to_dense(&self) -> Result<DMatrix<C64>> {
        let n = self.nrows.max(self.ncols);
        if n > DENSE_LIMIT {
            return Err(Error::TooLarge {
                n,
                limit: DENSE_LIMIT,
            });
        }
        let mut a = DMatrix::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            for (r, v) in self.col_iter(j) {
                a[(r, j)] = v;
            }
        }
        Ok(a)
    }
}

impl LinearOperator for CscMatrix {
    fn dim(&self) -> usize {
        assert_eq!(self.nrows, self.ncols, "operator must be square");
        self.nrows
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.mul_vec_into(x, y);
    }
}

/// Square sparse matrix with a structurally symmetric pattern, optionally
/// flagged Hermitian. Its off-diagonal pattern doubles as an undirected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHermitianMatrix {
    inner: CscMatrix,
    hermitian: bool,
}

impl SparseHermitianMatrix {
    /// Wraps a CSC matrix after checking squareness, structural symmetry and,
    /// when `hermitian` is set, conjugate symmetry with a real diagonal.
    pub fn new(inner: CscMatrix, hermitian: bool) -> Result<Self> {
        if inner.nrows != inner.ncols {
            return Err(Error::DimensionMismatch {
                expected: inner.nrows,
                found: inner.ncols,
            });
        }
        let scale = inner.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
        for j in 0..inner.ncols {
            for (i, v) in inner.col_iter(j) {
                let (rows, vals) = inner.col(i);
                let Ok(p) = rows.binary_search(&j) else {
                    return Err(Error::NotSymmetric { row: i, col: j });
                };
                if hermitian && (vals[p] - v.conj()).norm() > tol {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { inner, hermitian })
    }

    pub(crate) fn new_unchecked(inner: CscMatrix, hermitian: bool) -> Self {
        debug_assert_eq!(inner.nrows, inner.ncols);
        Self { inner, hermitian }
    }

    pub fn from_dense(a: &DMatrix<C64>, hermitian: bool) -> Result<Self> {
        Self::new(CscMatrix::from_dense(a), hermitian)
    }

    pub fn n(&self) -> usize {
        self.inner.nrows
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    pub fn as_csc(&self) -> &CscMatrix {
        &self.inner
    }

    pub fn col(&self, j: usize) -> (&[usize], &[C64]) {
        self.inner.col(j)
    }

    pub fn col_iter(&self, j: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        self.inner.col_iter(j)
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.inner.get(i, j)
    }

    pub fn diag(&self, j: usize) -> C64 {
        self.inner.get(j, j)
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        self.inner.mul_vec(x)
    }

    /// Off-diagonal nonzero count of every column, i.e. node degrees.
    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n())
            .map(|j| {
                let rows = self.col(j).0;
                rows.len() - usize::from(rows.binary_search(&j).is_ok())
            })
            .collect()
    }

    /// Keeps the entries for which `keep(row, col, value)` holds. The caller
    /// guarantees the predicate is symmetric.
    pub(crate) fn retain(&self, mut keep: impl FnMut(usize, usize, C64) -> bool) -> Self {
        let columns = (0..self.n())
            .map(|j| self.col_iter(j).filter(|&(i, v)| keep(i, j, v)).collect())
            .collect();
        Self::new_unchecked(
            CscMatrix::from_sorted_columns(self.n(), columns),
            self.hermitian,
        )
    }

    pub fn to_dense(&self) -> Result<DMatrix<C64>> {
        self.inner.to_dense()
    }

    /// One `row col re im` line per stored entry, column-major order.
    pub fn to_triplet_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# n={} hermitian={}", self.n(), self.hermitian);
        for j in 0..self.n() {
            for (i, v) in self.col_iter(j) {
                let _ = writeln!(s, "{} {} {:e} {:e}", i, j, v.re, v.im);
            }
        }
        s
    }

    /// Parses the format written by [`Self::to_triplet_string`].
    pub fn from_triplet_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (n, hermitian) = match lines.next() {
            Some((_, header)) => parse_header(header)?,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty input".into(),
                })
            }
        };
        let mut triplets = Vec::new();
        for (no, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: &str| Error::Parse {
                line: no + 1,
                message: message.into(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad("expected `row col re im`"));
            }
            let i: usize = f[0].parse().map_err(|_| bad("bad row index"))?;
            let j: usize = f[1].parse().map_err(|_| bad("bad column index"))?;
            let re: f64 = f[2].parse().map_err(|_| bad("bad real part"))?;
            let im: f64 = f[3].parse().map_err(|_| bad("bad imaginary part"))?;
            triplets.push((i, j, C64::new(re, im)));
        }
        Self::new(CscMatrix::from_triplets(n, n, triplets)?, hermitian)
    }
}

fn parse_header(header: &str) -> Result<(usize, bool)> {
    let bad = || Error::Parse {
        line: 1,
        message: "expected `# n=<dim> hermitian=<bool>`".into(),
    };
    let rest = header.trim().strip_prefix('#').ok_or_else(bad)?;
    let mut n = None;
    let mut hermitian = None;
    for field in rest.split_whitespace() {
        if let Some(v) = field.strip_prefix("n=") {
            n = v.parse().ok();
        } else if let Some(v) = field.strip_prefix("hermitian=") {
            hermitian = v.parse().ok();
        }
    }
    Ok((n.ok_or_else(bad)?, hermitian.ok_or_else(bad)?))
}

impl LinearOperator for SparseHermitianMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.inner.mul_vec_into(x, y);
    }
}
