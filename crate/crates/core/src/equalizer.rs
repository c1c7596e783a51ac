//! Doubly-iterative sparsified MMSE turbo equalization.
//!
//! Each outer iteration estimates every symbol from the current soft priors,
//! maps the estimates to extrinsic bit LLRs and refreshes the priors, either
//! through the channel decoder (turbo) or directly (uncoded). The first
//! iteration solves two linear systems with restarted GMRES and shares one
//! `xi` across symbols; later iterations sparsify the covariance matrix and
//! use a factorized sparse approximate inverse.

use crate::coding::{siso_decode, CodeConfig, Interleaver, DEFAULT_LLR_CLIP};
use crate::sparse::{
    apply_inverse, fspai, gmres, jacobi_sparsify, node_sparsify, CscMatrix, DegreeCdf, GmresParams,
    GmresReport, SparseHermitianMatrix,
};
use crate::{Error, Result, C64};
use std::f64::consts::FRAC_1_SQRT_2;

/// Soft symbol priors: means and variances.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSymbolState {
    pub m: Vec<C64>,
    pub v: Vec<f64>,
}

impl SoftSymbolState {
    /// No prior knowledge: zero mean, unit variance.
    pub fn initial(n: usize) -> Self {
        Self {
            m: vec![C64::new(0.0, 0.0); n],
            v: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerConfig {
    pub n_outer: usize,
    /// GMRES restart length.
    pub j_max: usize,
    pub max_cycles: usize,
    /// GMRES relative residual target.
    pub eps_g: f64,
    /// FSPAI score threshold.
    pub eps_f: f64,
    /// Jacobi-scaled edge threshold.
    pub eps_a: f64,
    /// Node degree threshold; negative disables node pruning.
    pub eps_d: f64,
    /// FSPAI off-diagonal cap per column.
    pub zeta: usize,
    pub llr_clip: f64,
    /// Floor for the LLR denominator `1 - v xi`.
    pub sigma_floor: f64,
    /// Floor applied to prior variances before building the covariance.
    pub variance_floor: f64,
    /// Column of the channel matrix used for the shared `xi`.
    pub pilot_column: usize,
}

impl EqualizerConfig {
    /// Settings for a `paths`-path channel: thresholds `1e-3`, degree
    /// threshold `P/4`, column cap `P` and restart length `P`.
    pub fn for_paths(paths: usize) -> Self {
        Self {
            n_outer: 5,
            j_max: paths.max(1),
            max_cycles: 8,
            eps_g: 1e-3,
            eps_f: 1e-3,
            eps_a: 1e-3,
            eps_d: paths as f64 / 4.0,
            zeta: paths,
            llr_clip: DEFAULT_LLR_CLIP,
            sigma_floor: 1e-12,
            variance_floor: 1e-8,
            pilot_column: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::InvalidParameter(s.into()));
        if self.n_outer == 0 {
            return bad("n_outer must be at least 1");
        }
        if self.j_max == 0 || self.max_cycles == 0 {
            return bad("j_max and max_cycles must be at least 1");
        }
        for (name, v) in [
            ("eps_g", self.eps_g),
            ("eps_f", self.eps_f),
            ("eps_a", self.eps_a),
            ("sigma_floor", self.sigma_floor),
            ("variance_floor", self.variance_floor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a finite value >= 0"
                )));
            }
        }
        if !(self.llr_clip > 0.0) {
            return bad("llr_clip must be positive");
        }
        Ok(())
    }

    fn gmres_params(&self) -> GmresParams {
        GmresParams {
            restart: self.j_max,
            tol: self.eps_g,
            max_cycles: self.max_cycles,
        }
    }
}

/// Convergence summary of one GMRES solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveSummary {
    pub residual_trace: Vec<f64>,
    pub cycle_end_residuals: Vec<f64>,
    pub cycles_used: usize,
}

impl From<&GmresReport> for SolveSummary {
    fn from(r: &GmresReport) -> Self {
        Self {
            residual_trace: r.residual_trace.clone(),
            cycle_end_residuals: r.cycle_end_residuals.clone(),
            cycles_used: r.cycles_used,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimateDiagnostics {
    /// Initial iteration: the data solve and the pilot-column solve.
    Krylov {
        data: SolveSummary,
        pilot: SolveSummary,
        /// Imaginary part discarded from the shared `xi`.
        xi_imag: f64,
    },
    /// Later iterations.
    Factorized {
        covariance_nnz: usize,
        sparsified_nnz: usize,
        factor_degrees: DegreeCdf,
    },
    /// Direct reference solve.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub x_hat: Vec<C64>,
    pub xi: Vec<f64>,
    pub diagnostics: EstimateDiagnostics,
}

fn check_system(h: &CscMatrix, y: &[C64]) -> Result<()> {
    if h.nrows() != h.ncols() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            found: h.ncols(),
        });
    }
    if y.len() != h.nrows() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            found: y.len(),
        });
    }
    Ok(())
}

/// `A = H diag(v) H^H + n0 I`, Hermitian by construction. Entries that come
/// out exactly zero are not stored.
pub fn build_covariance(h: &CscMatrix, v: &[f64], n0: f64) -> Result<SparseHermitianMatrix> {
    if !(n0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise power must be positive, got {n0}"
        )));
    }
    let n = h.nrows();
    if v.len() != h.ncols() {
        return Err(Error::DimensionMismatch {
            expected: h.ncols(),
            found: v.len(),
        });
    }
    let hh = h.adjoint();
    let zero = C64::new(0.0, 0.0);
    let mut acc = vec![zero; n];
    let mut seen = vec![false; n];
    let mut touched = Vec::new();
    // Lower triangle first, mirrored afterwards so that A(i,j) = conj(A(j,i))
    // holds bit for bit.
    let mut lower: Vec<Vec<(usize, C64)>> = Vec::with_capacity(n);
    for j in 0..n {
        for (b, hjb_conj) in hh.col_iter(j) {
            let w = hjb_conj * v[b];
            for (i, hib) in h.col_iter(b) {
                if i < j {
                    continue;
                }
                if !seen[i] {
                    seen[i] = true;
                    touched.push(i);
                }
                acc[i] += hib * w;
            }
        }
        if !seen[j] {
            touched.push(j);
            seen[j] = true;
        }
        touched.sort_unstable();
        let mut col = Vec::with_capacity(touched.len());
        for &i in &touched {
            let mut val = acc[i];
            if i == j {
                val = C64::new(val.re + n0, 0.0);
            }
            if val != zero {
                col.push((i, val));
            }
            acc[i] = zero;
            seen[i] = false;
        }
        touched.clear();
        lower.push(col);
    }
    let mut columns: Vec<Vec<(usize, C64)>> = vec![Vec::new(); n];
    for (j, col) in lower.iter().enumerate() {
        for &(i, val) in col {
            if i > j {
                columns[i].push((j, val.conj()));
            }
        }
    }
    for (j, col) in lower.into_iter().enumerate() {
        columns[j].extend(col);
    }
    Ok(SparseHermitianMatrix::new_unchecked(
        CscMatrix::from_sorted_columns(n, columns),
        true,
    ))
}

/// First outer iteration (zero means, unit variances): solves `A f1 = y` and
/// `A f2 = h_{n0}` by GMRES, then `x_hat_n = h_n^H f1` with the shared
/// `xi = h_{n0}^H f2`.
pub fn estimate_initial(
    h: &CscMatrix,
    y: &[C64],
    n0: f64,
    cfg: &EqualizerConfig,
) -> Result<EstimateResult> {
    check_system(h, y)?;
    let n = h.ncols();
    let pilot_col = cfg.pilot_column;
    if pilot_col >= n {
        return Err(Error::InvalidParameter("pilot column out of range".into()));
    }
    let a = build_covariance(h, &vec![1.0; n], n0)?;
    let params = cfg.gmres_params();
    let data = gmres(&a, y, None, &params);
    let mut pilot = vec![C64::new(0.0, 0.0); n];
    for (r, val) in h.col_iter(pilot_col) {
        pilot[r] = val;
    }
    let pilot_rep = gmres(&a, &pilot, None, &params);
    for rep in [&data, &pilot_rep] {
        if !rep.converged {
            return Err(Error::NotConverged {
                relative_residual: rep.final_residual(),
                cycles: rep.cycles_used,
            });
        }
    }
    let xi_c = h.col_dot(pilot_col, &pilot_rep.solution);
    Ok(EstimateResult {
        x_hat: h.adjoint_mul_vec(&data.solution),
        xi: vec![xi_c.re; n],
        diagnostics: EstimateDiagnostics::Krylov {
            data: SolveSummary::from(&data),
            pilot: SolveSummary::from(&pilot_rep),
            xi_imag: xi_c.im,
        },
    })
}

/// The covariance after both pruning rules, ready for the factorization.
pub fn sparsified_covariance(
    h: &CscMatrix,
    v: &[f64],
    n0: f64,
    cfg: &EqualizerConfig,
) -> Result<(SparseHermitianMatrix, SparseHermitianMatrix)> {
    let a = build_covariance(h, v, n0)?;
    let pruned = node_sparsify(&jacobi_sparsify(&a, cfg.eps_a)?, cfg.eps_d);
    Ok((a, pruned))
}

/// Later outer iterations: rebuilds and sparsifies the covariance, factors
/// its inverse as `L L^H` and forms `x_hat_n` with per-symbol
/// `xi_n = ||L^H h_n||^2`.
pub fn estimate_subsequent(
    h: &CscMatrix,
    y: &[C64],
    n0: f64,
    state: &SoftSymbolState,
    cfg: &EqualizerConfig,
) -> Result<EstimateResult> {
    check_system(h, y)?;
    let n = h.ncols();
    if state.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: state.len(),
        });
    }
    let v: Vec<f64> = state.v.iter().map(|&x| x.max(cfg.variance_floor)).collect();
    let (a, pruned) = sparsified_covariance(h, &v, n0, cfg)?;
    let l = fspai(&pruned, cfg.zeta, cfg.eps_f)?;

    let hm = h.mul_vec(&state.m);
    let r: Vec<C64> = y.iter().zip(&hm).map(|(a, b)| a - b).collect();
    let g = apply_inverse(&l, &r);
    let rows = l.row_lists();
    let mut terms: Vec<(usize, C64)> = Vec::new();
    let mut x_hat = Vec::with_capacity(n);
    let mut xi = Vec::with_capacity(n);
    for col in 0..n {
        // (L^H h_n)_k = sum_r conj(L(r, k)) h_n(r).
        terms.clear();
        for (rr, hv) in h.col_iter(col) {
            terms.extend(rows[rr].iter().map(|&(k, lv)| (k, lv.conj() * hv)));
        }
        terms.sort_unstable_by_key(|t| t.0);
        let mut xi_n = 0.0;
        let mut i = 0;
        while i < terms.len() {
            let k = terms[i].0;
            let mut s = C64::new(0.0, 0.0);
            while i < terms.len() && terms[i].0 == k {
                s += terms[i].1;
                i += 1;
            }
            xi_n += s.norm_sqr();
        }
        let num = h.col_dot(col, &g) + state.m[col] * xi_n;
        x_hat.push(num / (1.0 + (1.0 - v[col]) * xi_n));
        xi.push(xi_n);
    }
    Ok(EstimateResult {
        x_hat,
        xi,
        diagnostics: EstimateDiagnostics::Factorized {
            covariance_nnz: a.nnz(),
            sparsified_nnz: pruned.nnz(),
            factor_degrees: l.degree_cdf(),
        },
    })
}

/// Extrinsic LLR pairs `(L(d_n1), L(d_n2))`, flattened:
/// `sqrt(8) (1 + (1 - v) xi) Re/Im(x_hat) / (1 - v xi)`.
pub fn extrinsic_llrs(
    x_hat: &[C64],
    xi: &[f64],
    v: &[f64],
    llr_clip: f64,
    sigma_floor: f64,
) -> Vec<f64> {
    assert!(x_hat.len() == xi.len() && xi.len() == v.len());
    let mut out = Vec::with_capacity(2 * x_hat.len());
    for ((x, &xi), &v) in x_hat.iter().zip(xi).zip(v) {
        let den = (1.0 - v * xi).max(sigma_floor);
        let scale = 8f64.sqrt() * (1.0 + (1.0 - v) * xi) / den;
        out.push((scale * x.re).clamp(-llr_clip, llr_clip));
        out.push((scale * x.im).clamp(-llr_clip, llr_clip));
    }
    out
}

/// Soft priors from bit LLR pairs: `m = (tanh(L1/2) + i tanh(L2/2)) / sqrt(2)`,
/// `v = 1 - |m|^2`.
pub fn update_priors(llrs: &[f64]) -> SoftSymbolState {
    assert!(llrs.len() % 2 == 0, "LLRs come in pairs");
    let m: Vec<C64> = llrs
        .chunks_exact(2)
        .map(|p| C64::new((p[0] / 2.0).tanh(), (p[1] / 2.0).tanh()) * FRAC_1_SQRT_2)
        .collect();
    let v = m
        .iter()
        .map(|z| (1.0 - z.norm_sqr()).clamp(0.0, 1.0))
        .collect();
    SoftSymbolState { m, v }
}

/// Source of symbol estimates for the outer loop.
pub trait SymbolEstimator {
    /// `iteration` counts from zero.
    fn estimate(
        &self,
        h: &CscMatrix,
        y: &[C64],
        n0: f64,
        state: &SoftSymbolState,
        iteration: usize,
    ) -> Result<EstimateResult>;
}

/// GMRES on the first iteration, sparsified FSPAI afterwards.
pub struct SparseEstimator<'a> {
    pub cfg: &'a EqualizerConfig,
}

impl SymbolEstimator for SparseEstimator<'_> {
    fn estimate(
        &self,
        h: &CscMatrix,
        y: &[C64],
        n0: f64,
        state: &SoftSymbolState,
        iteration: usize,
    ) -> Result<EstimateResult> {
        if iteration == 0 {
            estimate_initial(h, y, n0, self.cfg)
        } else {
            estimate_subsequent(h, y, n0, state, self.cfg)
        }
    }
}

/// How priors are refreshed between outer iterations.
#[derive(Debug, Clone, Copy)]
pub enum Link<'a> {
    /// Through the channel decoder.
    Turbo {
        code: &'a CodeConfig,
        interleaver: &'a Interleaver,
    },
    /// From the equalizer's own extrinsic output.
    Uncoded,
}

/// Per-frame result.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    /// Hard decisions after each outer iteration: information bits in turbo
    /// mode, the transmitted bit pairs in uncoded mode.
    pub decisions: Vec<Vec<u8>>,
    pub diagnostics: Vec<EstimateDiagnostics>,
}

/// Runs the outer loop with the sparse estimators.
pub fn equalize_frame(
    y: &[C64],
    h: &CscMatrix,
    n0: f64,
    cfg: &EqualizerConfig,
    link: Link<'_>,
) -> Result<FrameOutcome> {
    cfg.validate()?;
    equalize_frame_with(&SparseEstimator { cfg }, y, h, n0, cfg, link)
}

/// Runs the outer loop with any estimator.
pub fn equalize_frame_with<E: SymbolEstimator + ?Sized>(
    estimator: &E,
    y: &[C64],
    h: &CscMatrix,
    n0: f64,
    cfg: &EqualizerConfig,
    link: Link<'_>,
) -> Result<FrameOutcome> {
    check_system(h, y)?;
    let n = h.ncols();
    if let Link::Turbo { interleaver, .. } = link {
        if interleaver.len() != 2 * n {
            return Err(Error::DimensionMismatch {
                expected: 2 * n,
                found: interleaver.len(),
            });
        }
    }
    let mut state = SoftSymbolState::initial(n);
    let mut decisions = Vec::with_capacity(cfg.n_outer);
    let mut diagnostics = Vec::with_capacity(cfg.n_outer);
    for it in 0..cfg.n_outer {
        let est = estimator.estimate(h, y, n0, &state, it)?;
        let v: Vec<f64> = state.v.iter().map(|&x| x.max(cfg.variance_floor)).collect();
        let le = extrinsic_llrs(&est.x_hat, &est.xi, &v, cfg.llr_clip, cfg.sigma_floor);
        diagnostics.push(est.diagnostics);
        let last = it + 1 == cfg.n_outer;
        match link {
            Link::Turbo { code, interleaver } => {
                let out = siso_decode(code, &interleaver.deinterleave(&le))?;
                decisions.push(out.decisions);
                if !last {
                    state = update_priors(&interleaver.interleave(&out.extrinsic));
                }
            }
            Link::Uncoded => {
                decisions.push(le.iter().map(|&l| u8::from(l < 0.0)).collect());
                if !last {
                    state = update_priors(&le);
                }
            }
        }
    }
    Ok(FrameOutcome {
        decisions,
        diagnostics,
    })
}
