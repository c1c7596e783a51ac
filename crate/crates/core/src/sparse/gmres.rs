//! Restarted GMRES with modified Gram-Schmidt Arnoldi and incremental Givens
//! rotations. The least-squares problem is only solved when a cycle ends.

use super::matrix::LinearOperator;
use super::vecops::{axpy, dot, norm};
use crate::C64;

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresParams {
    /// Krylov dimension per cycle.
    pub restart: usize,
    /// Target residual relative to the initial residual.
    pub tol: f64,
    /// Maximum number of cycles.
    pub max_cycles: usize,
}

impl GmresParams {
    /// Unrestarted solver on an `n`-dimensional system.
    pub fn full(n: usize, tol: f64) -> Self {
        Self {
            restart: n.max(1),
            tol,
            max_cycles: 1,
        }
    }
}

/// Outcome of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct GmresReport {
    pub solution: Vec<C64>,
    /// Relative residual after each inner iteration, normalized by the very
    /// first residual norm and continued across restarts.
    pub residual_trace: Vec<f64>,
    /// Relative residual of the iterate at the end of each cycle.
    pub cycle_end_residuals: Vec<f64>,
    pub cycles_used: usize,
    pub converged: bool,
}

impl GmresReport {
    pub fn iterations(&self) -> usize {
        self.residual_trace.len()
    }

    /// Last relative residual seen, 0 for trivial solves.
    pub fn final_residual(&self) -> f64 {
        self.residual_trace.last().copied().unwrap_or(0.0)
    }
}

/// Complex rotation `[[conj(c), s], [-s, c]]` with real `s`, zeroing the
/// second component of `(a, b)` for real `b >= 0`.
#[derive(Clone, Copy)]
struct Givens {
    c: C64,
    s: f64,
}

impl Givens {
    fn new(a: C64, b: f64) -> (Self, f64) {
        let d = a.norm().hypot(b);
        if d == 0.0 {
            return (
                Self {
                    c: C64::new(1.0, 0.0),
                    s: 0.0,
                },
                0.0,
            );
        }
        (Self { c: a / d, s: b / d }, d)
    }

    fn apply(&self, x: C64, y: C64) -> (C64, C64) {
        (self.c.conj() * x + self.s * y, -self.s * x + self.c * y)
    }
}

/// Solves `A f = b` starting from `f0`.
pub fn gmres<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[C64],
    f0: Option<&[C64]>,
    params: &GmresParams,
) -> GmresReport {
    let n = a.dim();
    assert_eq!(b.len(), n, "right-hand side length");
    let zero = C64::new(0.0, 0.0);
    let mut f = match f0 {
        Some(g) => {
            assert_eq!(g.len(), n, "initial guess length");
            g.to_vec()
        }
        None => vec![zero; n],
    };
    let done = |f, trace, ends, cycles, converged| GmresReport {
        solution: f,
        residual_trace: trace,
        cycle_end_residuals: ends,
        cycles_used: cycles,
        converged,
    };
    if norm(b) == 0.0 {
        return done(vec![zero; n], vec![], vec![], 0, true);
    }

    let mut r = residual(a, b, &f);
    let rho0 = norm(&r);
    // A guess that already meets the target relative to `b` is returned as is.
    if rho0 == 0.0 || (f0.is_some() && rho0 <= params.tol * norm(b)) {
        return done(f, vec![], vec![], 0, true);
    }
    let restart = params.restart.clamp(1, n);
    let mut trace = Vec::new();
    let mut ends = Vec::new();
    let mut au = vec![zero; n];

    for cycle in 1..=params.max_cycles.max(1) {
        let beta = norm(&r);
        let mut basis: Vec<Vec<C64>> = vec![r.iter().map(|z| z / beta).collect()];
        // Columns of the triangularized Hessenberg matrix.
        let mut u_cols: Vec<Vec<C64>> = Vec::with_capacity(restart);
        let mut rotations: Vec<Givens> = Vec::with_capacity(restart);
        let mut w = vec![C64::new(beta, 0.0)];
        let mut converged = false;

        for j in 0..restart {
            a.apply(&basis[j], &mut au);
            let scale = norm(&au);
            let mut t = Vec::with_capacity(j + 2);
            for p in &basis {
                let h = dot(p, &au);
                axpy(-h, p, &mut au);
                t.push(h);
            }
            let sub = norm(&au);
            let breakdown = sub <= 1e-14 * scale;
            for (i, g) in rotations.iter().enumerate() {
                let (x, y) = g.apply(t[i], t[i + 1]);
                t[i] = x;
                t[i + 1] = y;
            }
            let (g, d) = Givens::new(t[j], if breakdown { 0.0 } else { sub });
            t[j] = C64::new(d, 0.0);
            rotations.push(g);
            u_cols.push(t);
            let (wj, wj1) = g.apply(w[j], zero);
            w[j] = wj;
            w.push(wj1);

            let rel = wj1.norm() / rho0;
            trace.push(rel);
            if rel <= params.tol || breakdown {
                converged = true;
                break;
            }
            if j + 1 < restart {
                basis.push(au.iter().map(|z| z / sub).collect());
            }
        }

        let y = back_substitute(&u_cols, &w);
        for (yi, p) in y.iter().zip(&basis) {
            axpy(*yi, p, &mut f);
        }
        r = residual(a, b, &f);
        let rel_true = norm(&r) / rho0;
        ends.push(rel_true);
        if converged || rel_true <= params.tol {
            return done(f, trace, ends, cycle, true);
        }
    }
    let cycles = ends.len();
    done(f, trace, ends, cycles, false)
}

fn residual<A: LinearOperator + ?Sized>(a: &A, b: &[C64], f: &[C64]) -> Vec<C64> {
    let mut r = vec![C64::new(0.0, 0.0); b.len()];
    a.apply(f, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    r
}

/// Solves the leading `k x k` upper-triangular system `U y = w`.
fn back_substitute(u_cols: &[Vec<C64>], w: &[C64]) -> Vec<C64> {
    let k = u_cols.len();
    let mut y = w[..k].to_vec();
    for i in (0..k).rev() {
        y[i] /= u_cols[i][i];
        let yi = y[i];
        for (l, yl) in y.iter_mut().enumerate().take(i) {
            *yl -= u_cols[i][l] * yi;
        }
    }
    y
}
