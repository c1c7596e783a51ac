//! Factorized sparse approximate inverse of an HPD matrix, `L L^H ≈ A^{-1}`
//! with `L` lower triangular, built one column at a time by greedy pattern
//! growth driven by the Kaporin condition number.

use super::graph::DegreeCdf;
use super::matrix::{SparseHermitianMatrix, DENSE_LIMIT};
use crate::{Error, Result, C64};
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Strictly lower part of one factor column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactorColumn {
    /// Row indices, sorted, all greater than the column index.
    pub rows: Vec<usize>,
    pub values: Vec<C64>,
}

/// Sparse lower-triangular factor with a real positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    diag: Vec<f64>,
    cols: Vec<FactorColumn>,
}

impl CholeskyFactor {
    pub fn new(diag: Vec<f64>, cols: Vec<FactorColumn>) -> Result<Self> {
        if diag.len() != cols.len() {
            return Err(Error::DimensionMismatch {
                expected: diag.len(),
                found: cols.len(),
            });
        }
        for (k, (d, c)) in diag.iter().zip(&cols).enumerate() {
            if !(*d > 0.0) {
                return Err(Error::NonPositiveDiagonal {
                    index: k,
                    value: *d,
                });
            }
            if c.rows.len() != c.values.len()
                || c.rows.windows(2).any(|w| w[0] >= w[1])
                || c.rows.first().is_some_and(|&r| r <= k)
                || c.rows.last().is_some_and(|&r| r >= diag.len())
            {
                return Err(Error::InvalidParameter(format!(
                    "column {k} is not strictly lower triangular"
                )));
            }
        }
        Ok(Self { diag, cols })
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self, k: usize) -> f64 {
        self.diag[k]
    }

    pub fn col(&self, k: usize) -> &FactorColumn {
        &self.cols[k]
    }

    /// Off-diagonal nonzeros per column.
    pub fn degrees(&self) -> Vec<usize> {
        self.cols.iter().map(|c| c.rows.len()).collect()
    }

    pub fn degree_cdf(&self) -> DegreeCdf {
        DegreeCdf::from_degrees(&self.degrees(), self.n())
    }

    /// `L^H x`.
    pub fn adjoint_mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n());
        (0..self.n())
            .map(|k| {
                let c = &self.cols[k];
                c.rows
                    .iter()
                    .zip(&c.values)
                    .fold(self.diag[k] * x[k], |acc, (&r, v)| acc + v.conj() * x[r])
            })
            .collect()
    }

    /// `L x`.
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n());
        let mut y: Vec<C64> = x.iter().zip(&self.diag).map(|(xi, d)| xi * d).collect();
        for (k, c) in self.cols.iter().enumerate() {
            for (&r, v) in c.rows.iter().zip(&c.values) {
                y[r] += v * x[k];
            }
        }
        y
    }

    /// Entries of every row, `row_lists()[r]` holding `(k, L(r, k))` for
    /// `k <= r` in increasing `k`.
    pub fn row_lists(&self) -> Vec<Vec<(usize, C64)>> {
        let mut rows: Vec<Vec<(usize, C64)>> = (0..self.n())
            .map(|r| vec![(r, C64::new(self.diag[r], 0.0))])
            .collect();
        for (k, c) in self.cols.iter().enumerate() {
            for (&r, &v) in c.rows.iter().zip(&c.values) {
                rows[r].push((k, v));
            }
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
        }
        rows
    }

    pub fn to_dense(&self) -> Result<DMatrix<C64>> {
        if self.n() > DENSE_LIMIT {
            return Err(Error::TooLarge {
                n: self.n(),
                limit: DENSE_LIMIT,
            });
        }
        let mut l = DMatrix::zeros(self.n(), self.n());
        for k in 0..self.n() {
            l[(k, k)] = C64::new(self.diag[k], 0.0);
            for (&r, &v) in self.cols[k].rows.iter().zip(&self.cols[k].values) {
                l[(r, k)] = v;
            }
        }
        Ok(l)
    }
}

/// `L (L^H b)`, the approximate solve `A^{-1} b`.
pub fn apply_inverse(l: &CholeskyFactor, b: &[C64]) -> Vec<C64> {
    l.mul_vec(&l.adjoint_mul_vec(b))
}

/// Per-thread scratch space, reused across columns.
struct Workspace {
    acc: Vec<C64>,
    stamp: Vec<usize>,
    seen: Vec<bool>,
    touched: Vec<usize>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            acc: vec![C64::new(0.0, 0.0); n],
            stamp: vec![usize::MAX; n],
            seen: vec![false; n],
            touched: Vec::new(),
        }
    }
}

/// State of one column after each pattern update.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnState {
    pub diag: f64,
    pub column: FactorColumn,
}

fn solve_column(
    a: &SparseHermitianMatrix,
    k: usize,
    zeta: usize,
    eps_f: f64,
    ws: &mut Workspace,
    mut observe: impl FnMut(&ColumnState),
) -> Result<ColumnState> {
    let akk = a.diag(k).re;
    if !(akk > 0.0) {
        return Err(Error::Indefinite { column: k });
    }
    let mut state = ColumnState {
        diag: 1.0 / akk.sqrt(),
        column: FactorColumn::default(),
    };
    observe(&state);
    // `stamp[r] == k` marks rows already in the pattern.
    ws.stamp[k] = k;
    while state.column.rows.len() < zeta {
        // (A l_k)(r) for rows r > k outside the pattern.
        let entries = std::iter::once((k, C64::new(state.diag, 0.0))).chain(
            state
                .column
                .rows
                .iter()
                .copied()
                .zip(state.column.values.iter().copied()),
        );
        for (i, li) in entries {
            for (r, air) in a.col_iter(i) {
                if r <= k || ws.stamp[r] == k {
                    continue;
                }
                if !ws.seen[r] {
                    ws.seen[r] = true;
                    ws.touched.push(r);
                }
                ws.acc[r] += air * li;
            }
        }
        let mut best: Option<(f64, usize)> = None;
        ws.touched.sort_unstable();
        for &r in &ws.touched {
            let g = ws.acc[r];
            ws.acc[r] = C64::new(0.0, 0.0);
            ws.seen[r] = false;
            if g == C64::new(0.0, 0.0) {
                continue;
            }
            let arr = a.diag(r).re;
            if !(arr > 0.0) {
                return Err(Error::Indefinite { column: r });
            }
            let eta = g.norm_sqr() / arr;
            if best.is_none_or(|(e, _)| eta > e) {
                best = Some((eta, r));
            }
        }
        ws.touched.clear();
        let Some((eta, r)) = best else { break };
        if eta < eps_f {
            break;
        }
        let pos = state.column.rows.partition_point(|&x| x < r);
        state.column.rows.insert(pos, r);
        ws.stamp[r] = k;
        let (diag, values) = column_update(a, k, &state.column.rows)?;
        state.diag = diag;
        state.column.values = values;
        observe(&state);
    }
    for &r in &state.column.rows {
        ws.stamp[r] = usize::MAX;
    }
    ws.stamp[k] = usize::MAX;
    Ok(state)
}

/// Optimal column values for a fixed pattern `{k} ∪ set`:
/// `q = A(set,set)^{-1} a_k(set)`, `l_kk = (a_kk - a_k(set)^H q)^{-1/2}`,
/// `l_k(set) = -l_kk q`.
fn column_update(a: &SparseHermitianMatrix, k: usize, set: &[usize]) -> Result<(f64, Vec<C64>)> {
    let m = set.len();
    let mut block = vec![C64::new(0.0, 0.0); m * m];
    for (jj, &j) in set.iter().enumerate() {
        for (ii, &i) in set.iter().enumerate().skip(jj) {
            block[ii + m * jj] = a.get(i, j);
        }
    }
    let rhs: Vec<C64> = set.iter().map(|&i| a.get(i, k)).collect();
    let q = small_cholesky_solve(&mut block, m, &rhs).ok_or(Error::Indefinite { column: k })?;
    let s = a.diag(k).re
        - rhs
            .iter()
            .zip(&q)
            .map(|(x, y)| x.conj() * y)
            .sum::<C64>()
            .re;
    if !(s > 0.0) {
        return Err(Error::Indefinite { column: k });
    }
    let lkk = 1.0 / s.sqrt();
    Ok((lkk, q.into_iter().map(|v| -lkk * v).collect()))
}

/// Solves `B x = b` for a small HPD `B` whose lower triangle is stored
/// column-major in `block`; the block is overwritten by its Cholesky factor.
fn small_cholesky_solve(block: &mut [C64], m: usize, b: &[C64]) -> Option<Vec<C64>> {
    for j in 0..m {
        let mut d = block[j + m * j].re;
        for p in 0..j {
            d -= block[j + m * p].norm_sqr();
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        block[j + m * j] = C64::new(d, 0.0);
        for i in j + 1..m {
            let mut v = block[i + m * j];
            for p in 0..j {
                v -= block[i + m * p] * block[j + m * p].conj();
            }
            block[i + m * j] = v / d;
        }
    }
    let mut x = b.to_vec();
    for i in 0..m {
        for p in 0..i {
            let t = block[i + m * p] * x[p];
            x[i] -= t;
        }
        x[i] /= block[i + m * i].re;
    }
    for i in (0..m).rev() {
        for p in i + 1..m {
            let t = block[p + m * i].conj() * x[p];
            x[i] -= t;
        }
        x[i] /= block[i + m * i].re;
    }
    Some(x)
}

/// Builds the factor for an HPD matrix. At most `zeta` off-diagonal entries
/// per column; a column stops growing once the best score drops below
/// `eps_f`. Columns are computed in parallel with results identical to a
/// sequential run.
pub fn fspai(a: &SparseHermitianMatrix, zeta: usize, eps_f: f64) -> Result<CholeskyFactor> {
    let n = a.n();
    let states: Vec<ColumnState> = (0..n)
        .into_par_iter()
        .with_min_len(64)
        .map_init(
            || Workspace::new(n),
            |ws, k| solve_column(a, k, zeta, eps_f, ws, |_| {}),
        )
        .collect::<Result<_>>()?;
    let (diag, cols) = states.into_iter().map(|s| (s.diag, s.column)).unzip();
    Ok(CholeskyFactor { diag, cols })
}

/// Every intermediate state of column `k`, starting from the diagonal guess.
pub fn fspai_column_history(
    a: &SparseHermitianMatrix,
    k: usize,
    zeta: usize,
    eps_f: f64,
) -> Result<Vec<ColumnState>> {
    let mut history = Vec::new();
    let mut ws = Workspace::new(a.n());
    solve_column(a, k, zeta, eps_f, &mut ws, |s| history.push(s.clone()))?;
    Ok(history)
}

/// Replaces column `k` of `l`.
pub fn with_column(l: &CholeskyFactor, k: usize, state: &ColumnState) -> CholeskyFactor {
    let mut out = l.clone();
    out.diag[k] = state.diag;
    out.cols[k] = state.column.clone();
    out
}

/// Kaporin condition number `tr(L^H A L) / (n det(L^H A L)^{1/n})`, using
/// `log det(L^H A L) = log det A + 2 sum log l_kk`.
pub fn kaporin_number(a: &SparseHermitianMatrix, l: &CholeskyFactor) -> Result<f64> {
    let n = a.n();
    if l.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: l.n(),
        });
    }
    let chol = a
        .to_dense()?
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("determinant is not positive".into()))?;
    let log_det_a: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
    let log_det = log_det_a + 2.0 * l.diag.iter().map(|d| d.ln()).sum::<f64>();

    let mut trace = 0.0;
    let mut x = vec![C64::new(0.0, 0.0); n];
    for k in 0..n {
        let c = &l.cols[k];
        x[k] = C64::new(l.diag[k], 0.0);
        for (&r, &v) in c.rows.iter().zip(&c.values) {
            x[r] = v;
        }
        let ax = a.mul_vec(&x);
        trace += x
            .iter()
            .zip(&ax)
            .map(|(p, q)| (p.conj() * q).re)
            .sum::<f64>();
        x[k] = C64::new(0.0, 0.0);
        for &r in &c.rows {
            x[r] = C64::new(0.0, 0.0);
        }
    }
    Ok(trace / (n as f64 * (log_det / n as f64).exp()))
}
