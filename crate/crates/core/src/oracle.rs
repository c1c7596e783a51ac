//! Reference estimators built on exact factorizations.
//!
//! [`dense_mmse`] forms the covariance densely and is limited to small
//! frames. [`TimeDomainLmmse`] handles the first-iteration (unit variance)
//! LMMSE at full frame sizes: the delay-Doppler covariance is unitarily
//! similar to `H_T H_T^H + N0 I`, which is cyclically banded in the time
//! domain and becomes a plain band after an interleaving permutation.

use crate::channel::{time_matrix_sparse, ChannelRealization};
use crate::equalizer::{EstimateDiagnostics, EstimateResult, SoftSymbolState, SymbolEstimator};
use crate::frame::{demodulate, modulate_body, OtfsGrid};
use crate::sparse::{CscMatrix, DENSE_LIMIT};
use crate::{Error, Result, C64};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// Which `xi` the estimates report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XiRule {
    /// Exact `h_n^H A^{-1} h_n` for every symbol.
    PerSymbol,
    /// The exact value of one column, shared by all symbols.
    SharedColumn(usize),
}

fn apply_rule(xi: Vec<f64>, rule: XiRule) -> Result<Vec<f64>> {
    match rule {
        XiRule::PerSymbol => Ok(xi),
        XiRule::SharedColumn(c) => {
            let v = *xi
                .get(c)
                .ok_or_else(|| Error::InvalidParameter("shared xi column out of range".into()))?;
            Ok(vec![v; xi.len()])
        }
    }
}

/// Exact soft-interference-cancelling MMSE estimate by dense Cholesky.
pub fn dense_mmse(
    h: &CscMatrix,
    y: &[C64],
    n0: f64,
    state: &SoftSymbolState,
) -> Result<EstimateResult> {
    let n = h.ncols();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: DENSE_LIMIT,
        });
    }
    if y.len() != h.nrows() || state.len() != n || h.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len().min(state.len()),
        });
    }
    let hd = h.to_dense()?;
    // Sum of v_b h_b h_b^H over the sparse columns, lower triangle only.
    let mut a = DMatrix::<C64>::zeros(n, n);
    for b in 0..n {
        let (rows, vals) = h.col(b);
        for (&j, &hj) in rows.iter().zip(vals) {
            let w = hj.conj() * state.v[b];
            for (&i, &hi) in rows.iter().zip(vals) {
                if i >= j {
                    a[(i, j)] += hi * w;
                }
            }
        }
    }
    for i in 0..n {
        a[(i, i)] += C64::new(n0, 0.0);
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("covariance is not positive definite".into()))?;
    let w = chol
        .l_dirty()
        .solve_lower_triangular(&hd)
        .ok_or_else(|| Error::InvalidParameter("singular factor".into()))?;
    let xi: Vec<f64> = w.column_iter().map(|c| c.norm_squared()).collect();
    let hm = &hd * DVector::from_column_slice(&state.m);
    let r = DVector::from_iterator(n, y.iter().zip(hm.iter()).map(|(a, b)| a - b));
    let g = chol.solve(&r);
    let proj = hd.adjoint() * g;
    let x_hat = (0..n)
        .map(|i| (proj[i] + state.m[i] * xi[i]) / (1.0 + (1.0 - state.v[i]) * xi[i]))
        .collect();
    Ok(EstimateResult {
        x_hat,
        xi,
        diagnostics: EstimateDiagnostics::Direct,
    })
}

/// Dense MMSE at every outer iteration (the I-MMSE reference).
pub struct DenseEstimator {
    pub xi_rule: XiRule,
}

impl SymbolEstimator for DenseEstimator {
    fn estimate(
        &self,
        h: &CscMatrix,
        y: &[C64],
        n0: f64,
        state: &SoftSymbolState,
        _iteration: usize,
    ) -> Result<EstimateResult> {
        let mut est = dense_mmse(h, y, n0, state)?;
        est.xi = apply_rule(est.xi, self.xi_rule)?;
        Ok(est)
    }
}

/// Lower band of a Hermitian matrix: `data[i * (p + 1) + p - (i - j)]`
/// holds entry `(i, j)` for `i - p <= j <= i`.
#[derive(Debug, Clone)]
struct Band {
    n: usize,
    p: usize,
    data: Vec<C64>,
}

/// Upper limit on stored band entries.
const BAND_LIMIT: usize = 1 << 24;

impl Band {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.p + 1) + self.p + j - i
    }

    fn get(&self, i: usize, j: usize) -> C64 {
        self.data[self.idx(i, j)]
    }

    /// `sum_c g_c g_c^H + shift I` for the columns `g_c` of `g`, rows
    /// relabelled by `pos`.
    fn gram(g: &CscMatrix, pos: &[usize], shift: f64) -> Result<Self> {
        let n = g.nrows();
        let mut p = 0;
        for c in 0..g.ncols() {
            let (rows, _) = g.col(c);
            for &i in rows {
                for &j in rows {
                    p = p.max(pos[i].abs_diff(pos[j]));
                }
            }
        }
        if n * (p + 1) > BAND_LIMIT {
            return Err(Error::TooLarge {
                n: n * (p + 1),
                limit: BAND_LIMIT,
            });
        }
        let mut band = Self {
            n,
            p,
            data: vec![C64::new(0.0, 0.0); n * (p + 1)],
        };
        for c in 0..g.ncols() {
            for (i, gi) in g.col_iter(c) {
                for (j, gj) in g.col_iter(c) {
                    if pos[i] >= pos[j] {
                        let k = band.idx(pos[i], pos[j]);
                        band.data[k] += gi * gj.conj();
                    }
                }
            }
        }
        for i in 0..n {
            let k = band.idx(i, i);
            band.data[k] += shift;
        }
        Ok(band)
    }

    /// Cholesky factor of `scale * B + shift * I`, or `None` if that matrix
    /// is not numerically positive definite.
    fn cholesky(&self, scale: f64, shift: f64) -> Option<Band> {
        let (n, p) = (self.n, self.p);
        let mut l = Band {
            n,
            p,
            data: vec![C64::new(0.0, 0.0); self.data.len()],
        };
        for i in 0..n {
            let lo = i.saturating_sub(p);
            for j in lo..=i {
                let mut s = self.get(i, j) * scale;
                if i == j {
                    s += shift;
                }
                let ri = l.idx(i, lo);
                let rj = if j >= lo { l.idx(j, lo) } else { 0 };
                let row_i = &l.data[ri..ri + (j - lo)];
                let row_j = &l.data[rj..rj + (j - lo)];
                for (a, b) in row_i.iter().zip(row_j) {
                    s -= a * b.conj();
                }
                let k = l.idx(i, j);
                if i == j {
                    if !(s.re > 0.0) || !s.re.is_finite() {
                        return None;
                    }
                    l.data[k] = C64::new(s.re.sqrt(), 0.0);
                } else {
                    l.data[k] = s / l.data[l.idx(j, j)].re;
                }
            }
        }
        Some(l)
    }

    /// Solves `L z = b` in place; entries before `start` must be zero.
    fn forward(&self, b: &mut [C64], start: usize) {
        for i in start..self.n {
            let lo = i.saturating_sub(self.p).max(start);
            let r = self.idx(i, lo);
            let mut s = b[i];
            for (a, z) in self.data[r..r + (i - lo)].iter().zip(&b[lo..i]) {
                s -= a * z;
            }
            b[i] = s / self.data[self.idx(i, i)].re;
        }
    }

    /// Solves `L^H x = z` in place.
    fn backward(&self, z: &mut [C64]) {
        for i in (0..self.n).rev() {
            let hi = (i + self.p).min(self.n - 1);
            let mut s = z[i];
            for k in i + 1..=hi {
                s -= self.get(k, i).conj() * z[k];
            }
            z[i] = s / self.data[self.idx(i, i)].re;
        }
    }

    fn row_abs_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for i in 0..self.n {
            for j in i.saturating_sub(self.p)..=i {
                let a = self.get(i, j).norm();
                s[i] += a;
                if i != j {
                    s[j] += a;
                }
            }
        }
        s
    }
}

/// Position of index `i` after interleaving the two halves of `0..n` from
/// both ends, which turns cyclic bands into plain bands of about twice the
/// width.
fn interleaved_positions(n: usize) -> Vec<usize> {
    (0..n)
        .map(|i| {
            if i < n.div_ceil(2) {
                2 * i
            } else {
                2 * (n - 1 - i) + 1
            }
        })
        .collect()
}

/// Exact first-iteration LMMSE through banded time-domain factorizations.
pub struct TimeDomainLmmse {
    grid: OtfsGrid,
    n0: f64,
    h_t: CscMatrix,
    pos: Vec<usize>,
    /// `H_T H_T^H + N0 I`, permuted.
    cov: Band,
    cov_factor: Band,
    /// `H_T^H H_T + N0 I`, permuted.
    gram_factor: Band,
}

impl TimeDomainLmmse {
    pub fn new(grid: &OtfsGrid, chan: &ChannelRealization, n0: f64) -> Result<Self> {
        if !(n0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise power must be positive, got {n0}"
            )));
        }
        let h_t = time_matrix_sparse(grid, chan)?;
        let pos = interleaved_positions(grid.len());
        let cov = Band::gram(&h_t, &pos, n0)?;
        let not_pd =
            || Error::InvalidParameter("banded covariance is not positive definite".into());
        let cov_factor = cov.cholesky(1.0, 0.0).ok_or_else(not_pd)?;
        let gram_factor = Band::gram(&h_t.adjoint(), &pos, n0)?
            .cholesky(1.0, 0.0)
            .ok_or_else(not_pd)?;
        Ok(Self {
            grid: *grid,
            n0,
            h_t,
            pos,
            cov,
            cov_factor,
            gram_factor,
        })
    }

    /// Half bandwidth of the permuted covariance.
    pub fn bandwidth(&self) -> usize {
        self.cov.p
    }

    /// `H_DD^H A^{-1} y`.
    pub fn estimate(&self, y: &[C64]) -> Result<Vec<C64>> {
        let t = modulate_body(&self.grid, y)?;
        let mut b = vec![C64::new(0.0, 0.0); t.len()];
        for (i, v) in t.into_iter().enumerate() {
            b[self.pos[i]] = v;
        }
        self.cov_factor.forward(&mut b, 0);
        self.cov_factor.backward(&mut b);
        let f: Vec<C64> = self.pos.iter().map(|&p| b[p]).collect();
        demodulate(&self.grid, &self.h_t.adjoint_mul_vec(&f))
    }

    /// Exact `xi_n = h_n^H A^{-1} h_n` for one symbol, through
    /// `xi_n = 1 - N0 e_n^H (H^H H + N0 I)^{-1} e_n`.
    pub fn xi_at(&self, index: usize) -> f64 {
        let m = self.grid.m;
        let n = self.grid.n;
        let (l, k) = (index % m, index / m);
        let mut b = vec![C64::new(0.0, 0.0); self.grid.len()];
        let scale = 1.0 / (n as f64).sqrt();
        let mut start = usize::MAX;
        for t in 0..n {
            let p = self.pos[l + m * t];
            b[p] = C64::from_polar(scale, 2.0 * PI * ((k * t) % n) as f64 / n as f64);
            start = start.min(p);
        }
        self.gram_factor.forward(&mut b, start);
        let q: f64 = b[start..].iter().map(|z| z.norm_sqr()).sum();
        1.0 - self.n0 * q
    }

    pub fn xi(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.xi_at(i)).collect()
    }

    /// Certified bracket of the extreme eigenvalues of the covariance:
    /// returns `(lo, hi)` with `lo < lambda_min` and `hi > lambda_max`, each
    /// within a relative `rel_tol` of the true value.
    pub fn spectrum_bounds(&self, rel_tol: f64) -> (f64, f64) {
        let diag: Vec<f64> = (0..self.cov.n).map(|i| self.cov.get(i, i).re).collect();
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let gersh = self.cov.row_abs_sums().into_iter().fold(0.0, f64::max);

        // A - s I is positive definite exactly when s < lambda_min.
        let (mut lo, mut hi) = (0.0, dmin);
        while hi - lo > rel_tol * hi {
            let mid = 0.5 * (lo + hi);
            if self.cov.cholesky(1.0, -mid).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lmin = lo;

        // s I - A is positive definite exactly when s > lambda_max.
        let (mut lo, mut hi) = (dmax, gersh * (1.0 + rel_tol) + f64::MIN_POSITIVE);
        while hi - lo > rel_tol * hi {
            let mid = 0.5 * (lo + hi);
            if self.cov.cholesky(-1.0, mid).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (lmin, hi)
    }
}

/// First-iteration LMMSE through [`TimeDomainLmmse`]. The channel is taken
/// from the realization, so the delay-Doppler matrix passed to
/// [`SymbolEstimator::estimate`] must be its exact (untruncated) image.
pub struct BandedLmmseEstimator<'a> {
    pub grid: &'a OtfsGrid,
    pub chan: &'a ChannelRealization,
    pub xi_rule: XiRule,
}

impl SymbolEstimator for BandedLmmseEstimator<'_> {
    fn estimate(
        &self,
        h: &CscMatrix,
        y: &[C64],
        n0: f64,
        _state: &SoftSymbolState,
        iteration: usize,
    ) -> Result<EstimateResult> {
        if iteration > 0 {
            return Err(Error::InvalidParameter(
                "the banded LMMSE reference covers the first outer iteration only".into(),
            ));
        }
        if h.ncols() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                found: h.ncols(),
            });
        }
        let lmmse = TimeDomainLmmse::new(self.grid, self.chan, n0)?;
        let xi = match self.xi_rule {
            XiRule::PerSymbol => lmmse.xi(),
            XiRule::SharedColumn(c) => {
                if c >= self.grid.len() {
                    return Err(Error::InvalidParameter(
                        "shared xi column out of range".into(),
                    ));
                }
                vec![lmmse.xi_at(c); self.grid.len()]
            }
        };
        Ok(EstimateResult {
            x_hat: lmmse.estimate(y)?,
            xi,
            diagnostics: EstimateDiagnostics::Direct,
        })
    }
}

/// Dense `H diag(v) H^H + N0 I`, for tests and small references.
pub fn dense_covariance(h: &CscMatrix, v: &[f64], n0: f64) -> Result<DMatrix<C64>> {
    let hd = h.to_dense()?;
    let vd = DMatrix::from_diagonal(&DVector::from_iterator(
        v.len(),
        v.iter().map(|&x| C64::new(x, 0.0)),
    ));
    let mut a = &hd * vd * hd.adjoint();
    for i in 0..a.nrows() {
        a[(i, i)] += C64::new(n0, 0.0);
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_dd_matrix, sample_channel, ChannelStatistics, Path};
    use crate::sparse::{eigen_extremes, SparseHermitianMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..n)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    fn setup(seed: u64, m: usize, n: usize, fractional: bool) -> (OtfsGrid, ChannelRealization) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = OtfsGrid::new(m, n, 5).unwrap();
        let stats = ChannelStatistics::uniform(4, 4, n / 2, fractional);
        (grid, sample_channel(&stats, &grid, &mut rng).unwrap())
    }

    #[test]
    fn interleaving_is_a_permutation_with_narrow_band() {
        for n in [1usize, 2, 5, 8, 33] {
            let pos = interleaved_positions(n);
            let mut seen = pos.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for i in 0..n {
                let j = (i + 1) % n;
                assert!(pos[i].abs_diff(pos[j]) <= 2);
            }
        }
    }

    #[test]
    fn band_cholesky_solves_like_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20;
        let mut t = Vec::new();
        for c in 0..n {
            for d in 0..3 {
                t.push((
                    (c + d) % n,
                    c,
                    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>()),
                ));
            }
        }
        let g = CscMatrix::from_triplets(n, n, t).unwrap();
        let pos = interleaved_positions(n);
        let band = Band::gram(&g, &pos, 0.5).unwrap();
        assert!(band.p <= 5);
        let l = band.cholesky(1.0, 0.0).unwrap();
        let b = random_vec(n, &mut rng);
        let mut x = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            x[pos[i]] = b[i];
        }
        l.forward(&mut x, 0);
        l.backward(&mut x);
        let x: Vec<C64> = pos.iter().map(|&p| x[p]).collect();
        let gd = g.to_dense().unwrap();
        let mut a = &gd * gd.adjoint();
        for i in 0..n {
            a[(i, i)] += C64::new(0.5, 0.0);
        }
        let ax = &a * DVector::from_column_slice(&x);
        for i in 0..n {
            assert!((ax[i] - b[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn banded_route_matches_dense_mmse() {
        for seed in 0..6 {
            let (grid, chan) = setup(seed, 16, 8, seed % 2 == 1);
            let h = build_dd_matrix(&grid, &chan, grid.n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let y = random_vec(grid.len(), &mut rng);
            let n0 = 0.1 + 0.2 * seed as f64;
            let dense = dense_mmse(&h, &y, n0, &SoftSymbolState::initial(grid.len())).unwrap();
            let banded = TimeDomainLmmse::new(&grid, &chan, n0).unwrap();
            for (a, b) in banded.estimate(&y).unwrap().iter().zip(&dense.x_hat) {
                assert!((a - b).norm() < 1e-10);
            }
            for (a, b) in banded.xi().iter().zip(&dense.xi) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn spectrum_bracket_contains_dense_extremes() {
        let (grid, chan) = setup(4, 16, 8, false);
        let n0 = 0.05;
        let banded = TimeDomainLmmse::new(&grid, &chan, n0).unwrap();
        let (lo, hi) = banded.spectrum_bounds(1e-12);
        let h = build_dd_matrix(&grid, &chan, 0).unwrap();
        let a = SparseHermitianMatrix::from_dense(
            &dense_covariance(&h, &vec![1.0; grid.len()], n0).unwrap(),
            true,
        )
        .unwrap();
        let (emin, emax) = eigen_extremes(&a).unwrap();
        assert!(lo <= emin * (1.0 + 1e-10) && emin - lo < 1e-9 * emax);
        assert!(hi >= emax * (1.0 - 1e-10) && hi - emax < 1e-9 * emax);
    }

    #[test]
    fn scalar_channel_reference() {
        let grid = OtfsGrid::new(4, 2, 1).unwrap();
        let chan = ChannelRealization::new(vec![Path::integer(C64::new(0.0, 2.0), 0, 0)]).unwrap();
        let banded = TimeDomainLmmse::new(&grid, &chan, 1.0).unwrap();
        assert!(banded.xi().iter().all(|&x| (x - 0.8).abs() < 1e-14));
        let y = vec![C64::new(1.0, 0.0); 8];
        for x in banded.estimate(&y).unwrap() {
            assert!((x - C64::new(0.0, -0.4)).norm() < 1e-14);
        }
        let (lo, hi) = banded.spectrum_bounds(1e-12);
        assert!((lo - 5.0).abs() < 1e-10 && (hi - 5.0).abs() < 1e-10);
    }

    #[test]
    fn shared_rule_copies_one_column() {
        let (grid, chan) = setup(2, 8, 4, false);
        let h = build_dd_matrix(&grid, &chan, 0).unwrap();
        let y = random_vec(32, &mut ChaCha8Rng::seed_from_u64(3));
        let state = SoftSymbolState::initial(32);
        let per = DenseEstimator {
            xi_rule: XiRule::PerSymbol,
        }
        .estimate(&h, &y, 0.2, &state, 0)
        .unwrap();
        let shared = DenseEstimator {
            xi_rule: XiRule::SharedColumn(5),
        }
        .estimate(&h, &y, 0.2, &state, 0)
        .unwrap();
        assert!(shared.xi.iter().all(|&x| x == per.xi[5]));
        assert_eq!(shared.x_hat, per.x_hat);
        let banded = BandedLmmseEstimator {
            grid: &grid,
            chan: &chan,
            xi_rule: XiRule::SharedColumn(5),
        };
        let b = banded.estimate(&h, &y, 0.2, &state, 0).unwrap();
        assert!((b.xi[0] - per.xi[5]).abs() < 1e-12);
        assert!(banded.estimate(&h, &y, 0.2, &state, 1).is_err());
    }
}
