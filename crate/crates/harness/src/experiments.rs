//! The four experiments: BER sweeps, solver residual traces, `xi` spread and
//! sparsity of the approximate inverse factor.
//!
//! Frames are independent and run in parallel; results are folded in frame
//! order so the output does not depend on the worker count.

use crate::config::{LinkKind, Mode, SimConfig};
use crate::seeds::{frame_rng, interleaver_seed, Stream};
use crate::{noise_from_ebn0, HarnessError};
use otfs_core::channel::{apply_channel, build_dd_matrix, sample_channel, ChannelRealization};
use otfs_core::coding::{conv_encode, qpsk_map, CodeConfig, Interleaver};
use otfs_core::equalizer::{
    build_covariance, equalize_frame_with, EqualizerConfig, EstimateDiagnostics, Link,
    SolveSummary, SparseEstimator, SymbolEstimator,
};
use otfs_core::frame::{demodulate, modulate, strip_cp, OtfsGrid};
use otfs_core::oracle::{BandedLmmseEstimator, DenseEstimator, TimeDomainLmmse};
use otfs_core::sparse::{gmres, CscMatrix, DegreeCdf, GmresParams};
use otfs_core::C64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;

type Result<T> = std::result::Result<T, HarnessError>;

/// Relative width of the eigenvalue brackets used for the Chebyshev bound.
const SPECTRUM_REL_TOL: f64 = 1e-12;

/// Everything fixed for a run.
pub struct Context {
    pub cfg: SimConfig,
    pub grid: OtfsGrid,
    pub code: CodeConfig,
    pub interleaver: Interleaver,
}

impl Context {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        Ok(Self {
            cfg: cfg.clone(),
            grid,
            code: cfg.code(),
            interleaver: Interleaver::new(2 * grid.len(), interleaver_seed(cfg.master_seed)),
        })
    }

    fn frames_per_batch(&self) -> usize {
        (4 * rayon::current_num_threads()).max(4)
    }
}

/// One received frame with its ground truth.
pub struct Frame {
    pub chan: ChannelRealization,
    pub h: CscMatrix,
    pub y: Vec<C64>,
    /// Information bits for coded links, the transmitted bits otherwise.
    pub truth: Vec<u8>,
}

/// Draws frame `index` with `paths` paths at noise power `n0`. Channel,
/// payload and the noise shape do not depend on `n0`.
pub fn draw_frame(ctx: &Context, paths: usize, coded: bool, index: u64, n0: f64) -> Result<Frame> {
    let cfg = &ctx.cfg;
    let grid = &ctx.grid;
    let seed = cfg.master_seed;
    let chan = sample_channel(
        &cfg.channel_stats(paths),
        grid,
        &mut frame_rng(seed, index, Stream::Channel),
    )?;
    let mut bits_rng = frame_rng(seed, index, Stream::Bits);
    let n_bits = 2 * grid.len();
    let (truth, d) = if coded {
        let k1 = ctx.code.info_len_for(n_bits)?;
        let u: Vec<u8> = (0..k1).map(|_| bits_rng.random_range(0..2u8)).collect();
        let d = ctx.interleaver.interleave(&conv_encode(&ctx.code, &u));
        (u, d)
    } else {
        let d: Vec<u8> = (0..n_bits).map(|_| bits_rng.random_range(0..2u8)).collect();
        (d.clone(), d)
    };
    let x = qpsk_map(&d)?;
    let rx = apply_channel(
        grid,
        &chan,
        &modulate(grid, &x)?,
        n0,
        &mut frame_rng(seed, index, Stream::Noise),
    )?;
    let y = demodulate(grid, &strip_cp(grid, &rx)?)?;
    let h = build_dd_matrix(grid, &chan, cfg.trunc)?;
    Ok(Frame { chan, h, y, truth })
}

fn count_errors(decisions: &[u8], truth: &[u8]) -> u64 {
    decisions.iter().zip(truth).filter(|(a, b)| a != b).count() as u64
}

/// Hard decisions and estimator diagnostics per outer iteration.
pub fn run_receiver(
    ctx: &Context,
    mode: Mode,
    link: LinkKind,
    eq: &EqualizerConfig,
    frame: &Frame,
    n0: f64,
) -> Result<(Vec<u64>, Vec<EstimateDiagnostics>)> {
    let link_arg = match link {
        LinkKind::Turbo => Link::Turbo {
            code: &ctx.code,
            interleaver: &ctx.interleaver,
        },
        LinkKind::Uncoded => Link::Uncoded,
    };
    eq.validate()?;
    let sparse;
    let dense;
    let banded;
    let estimator: &dyn SymbolEstimator = match mode {
        Mode::Turbo | Mode::Uncoded => {
            sparse = SparseEstimator { cfg: eq };
            &sparse
        }
        Mode::ImmseOracle => {
            dense = DenseEstimator {
                xi_rule: ctx.cfg.xi_rule(),
            };
            &dense
        }
        Mode::LmmseOracle => {
            banded = BandedLmmseEstimator {
                grid: &ctx.grid,
                chan: &frame.chan,
                xi_rule: ctx.cfg.xi_rule(),
            };
            &banded
        }
    };
    let out = equalize_frame_with(estimator, &frame.y, &frame.h, n0, eq, link_arg)?;
    let errors = out
        .decisions
        .iter()
        .map(|d| count_errors(d, &frame.truth))
        .collect();
    Ok((errors, out.diagnostics))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerRecord {
    pub ebn0_db: f64,
    pub outer_iteration: usize,
    pub bits_sent: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub frames: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

/// BER after each outer iteration at every sweep point. A point stops at
/// the first frame where the last iteration has accumulated `min_errors`
/// errors, or after `max_frames` frames.
pub fn run_ber(cfg: &SimConfig) -> Result<Vec<BerRecord>> {
    let ctx = Context::new(cfg)?;
    let link = cfg.link();
    let coded = cfg.is_coded();
    let eq = cfg.equalizer();
    let n_outer = cfg.n_outer;
    let mut records = Vec::new();
    for &ebn0 in &cfg.ebn0_db {
        let start = Instant::now();
        let n0 = noise_from_ebn0(ebn0, cfg.rate(), 2.0);
        let mut errors = vec![0u64; n_outer];
        let (mut bits, mut frames) = (0u64, 0u64);
        let mut next = 0u64;
        'point: while next < cfg.max_frames {
            let end = (next + ctx.frames_per_batch() as u64).min(cfg.max_frames);
            let batch: Vec<Result<(usize, Vec<u64>)>> = (next..end)
                .into_par_iter()
                .map(|i| {
                    let frame = draw_frame(&ctx, cfg.paths, coded, i, n0)?;
                    let (e, _) = run_receiver(&ctx, cfg.mode, link, &eq, &frame, n0)?;
                    Ok((frame.truth.len(), e))
                })
                .collect();
            for r in batch {
                let (len, e) = r?;
                frames += 1;
                bits += len as u64;
                for (acc, x) in errors.iter_mut().zip(&e) {
                    *acc += x;
                }
                if errors[n_outer - 1] >= cfg.min_errors || frames >= cfg.max_frames {
                    break 'point;
                }
            }
            next = end;
        }
        let wall = cfg.timing.then(|| start.elapsed().as_secs_f64());
        for (it, &e) in errors.iter().enumerate() {
            records.push(BerRecord {
                ebn0_db: ebn0,
                outer_iteration: it + 1,
                bits_sent: bits,
                bit_errors: e,
                ber: e as f64 / bits as f64,
                frames,
                wall_seconds: wall,
            });
        }
    }
    Ok(records)
}

/// Solver behaviour on one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    pub ebn0_db: f64,
    pub realization: u64,
    /// `A f = y`.
    pub data: SolveSummary,
    /// `A f = h_{n0}`.
    pub pilot: SolveSummary,
    pub data_converged: bool,
    pub pilot_converged: bool,
    /// Bracket of the extreme eigenvalues of `A`.
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// First-iteration solves on `realizations` channels at every sweep point,
/// with the spectrum of each covariance. The spectrum comes from the banded
/// time-domain factorization, so the delay-Doppler matrix must be exact:
/// integer Doppler, or a truncation window covering all Doppler bins.
pub fn residual_study(cfg: &SimConfig) -> Result<Vec<ResidualSample>> {
    let ctx = Context::new(cfg)?;
    if cfg.fractional && 2 * cfg.trunc < cfg.n {
        return Err(HarnessError::Config(
            "residual runs need an untruncated channel matrix (trunc >= N/2)".into(),
        ));
    }
    let eq = cfg.equalizer();
    let params = GmresParams {
        restart: if cfg.full_gmres {
            ctx.grid.len()
        } else {
            eq.j_max
        },
        tol: cfg.eps_g,
        max_cycles: cfg.max_cycles,
    };
    let mut out = Vec::new();
    for &ebn0 in &cfg.ebn0_db {
        let n0 = noise_from_ebn0(ebn0, cfg.rate(), 2.0);
        let samples: Vec<Result<ResidualSample>> = (0..cfg.realizations as u64)
            .into_par_iter()
            .map(|r| {
                let frame = draw_frame(&ctx, cfg.paths, cfg.is_coded(), r, n0)?;
                let a = build_covariance(&frame.h, &vec![1.0; ctx.grid.len()], n0)?;
                let data = gmres(&a, &frame.y, None, &params);
                let mut h0 = vec![C64::new(0.0, 0.0); ctx.grid.len()];
                for (i, v) in frame.h.col_iter(cfg.pilot_column) {
                    h0[i] = v;
                }
                let pilot = gmres(&a, &h0, None, &params);
                let (lambda_min, lambda_max) = TimeDomainLmmse::new(&ctx.grid, &frame.chan, n0)?
                    .spectrum_bounds(SPECTRUM_REL_TOL);
                Ok(ResidualSample {
                    ebn0_db: ebn0,
                    realization: r,
                    data: SolveSummary::from(&data),
                    pilot: SolveSummary::from(&pilot),
                    data_converged: data.converged,
                    pilot_converged: pilot.converged,
                    lambda_min,
                    lambda_max,
                })
            })
            .collect();
        for s in samples {
            out.push(s?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRecord {
    pub ebn0_db: f64,
    pub iteration: usize,
    /// Realizations whose data solve reached this iteration.
    pub count_data: usize,
    pub mean_residual_data: f64,
    /// Mean Chebyshev bound over the same realizations.
    pub mean_bound_data: f64,
    pub count_pilot: usize,
    pub mean_residual_pilot: f64,
    pub mean_bound_pilot: f64,
}

fn chebyshev(s: &ResidualSample, j: usize) -> f64 {
    otfs_core::sparse::chebyshev_bound(s.lambda_min, s.lambda_max, j).unwrap_or(1.0)
}

/// Averages traces per inner iteration.
pub fn residual_rows(samples: &[ResidualSample]) -> Vec<ResidualRecord> {
    let mut points: Vec<f64> = Vec::new();
    for s in samples {
        if !points.contains(&s.ebn0_db) {
            points.push(s.ebn0_db);
        }
    }
    let mut rows = Vec::new();
    for p in points {
        let group: Vec<&ResidualSample> = samples.iter().filter(|s| s.ebn0_db == p).collect();
        let longest = group
            .iter()
            .map(|s| {
                s.data
                    .residual_trace
                    .len()
                    .max(s.pilot.residual_trace.len())
            })
            .max()
            .unwrap_or(0);
        for j in 0..longest {
            let mean = |pick: fn(&ResidualSample) -> &SolveSummary| {
                let hits: Vec<&&ResidualSample> = group
                    .iter()
                    .filter(|s| pick(s).residual_trace.len() > j)
                    .collect();
                let c = hits.len();
                if c == 0 {
                    return (0, f64::NAN, f64::NAN);
                }
                let r = hits.iter().map(|s| pick(s).residual_trace[j]).sum::<f64>() / c as f64;
                let b = hits.iter().map(|s| chebyshev(s, j + 1)).sum::<f64>() / c as f64;
                (c, r, b)
            };
            let (cd, rd, bd) = mean(|s| &s.data);
            let (cp, rp, bp) = mean(|s| &s.pilot);
            rows.push(ResidualRecord {
                ebn0_db: p,
                iteration: j + 1,
                count_data: cd,
                mean_residual_data: rd,
                mean_bound_data: bd,
                count_pilot: cp,
                mean_residual_pilot: rp,
                mean_bound_pilot: bp,
            });
        }
    }
    rows
}

pub fn run_residuals(cfg: &SimConfig) -> Result<Vec<ResidualRecord>> {
    Ok(residual_rows(&residual_study(cfg)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiVarRecord {
    pub paths: usize,
    pub ebn0_db: f64,
    pub realizations: usize,
    /// Mean over realizations of the spread of `xi_n` across symbols.
    pub v_xi: f64,
    pub v_xi_max: f64,
    pub mean_xi: f64,
}

/// Population variance.
fn variance(x: &[f64]) -> (f64, f64) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
    (mean, var)
}

/// Exact per-symbol `xi_n` spread for each path count in `xivar_paths`.
pub fn run_xivar(cfg: &SimConfig) -> Result<Vec<XiVarRecord>> {
    let ctx = Context::new(cfg)?;
    let mut out = Vec::new();
    for &paths in &cfg.xivar_paths {
        cfg.channel_stats(paths).validate(&ctx.grid)?;
        for &ebn0 in &cfg.ebn0_db {
            let n0 = noise_from_ebn0(ebn0, cfg.rate(), 2.0);
            let per: Vec<Result<(f64, f64)>> = (0..cfg.realizations as u64)
                .into_par_iter()
                .map(|r| {
                    let chan = sample_channel(
                        &cfg.channel_stats(paths),
                        &ctx.grid,
                        &mut frame_rng(cfg.master_seed, r, Stream::Channel),
                    )?;
                    let xi = TimeDomainLmmse::new(&ctx.grid, &chan, n0)?.xi();
                    Ok(variance(&xi))
                })
                .collect();
            let per = per.into_iter().collect::<Result<Vec<_>>>()?;
            let count = per.len() as f64;
            out.push(XiVarRecord {
                paths,
                ebn0_db: ebn0,
                realizations: per.len(),
                v_xi: per.iter().map(|p| p.1).sum::<f64>() / count,
                v_xi_max: per.iter().map(|p| p.1).fold(0.0, f64::max),
                mean_xi: per.iter().map(|p| p.0).sum::<f64>() / count,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityRecord {
    pub link: LinkKind,
    pub ebn0_db: f64,
    pub outer_iteration: usize,
    pub degree: f64,
    pub cdf: f64,
    pub frames: usize,
}

/// Pooled degree distribution of the factor at each outer iteration after
/// the first, for one link at one sweep point.
pub fn factor_degrees(cfg: &SimConfig, link: LinkKind, ebn0_db: f64) -> Result<Vec<DegreeCdf>> {
    let ctx = Context::new(cfg)?;
    let coded = link == LinkKind::Turbo;
    let rate = if coded { ctx.code.rate() } else { 1.0 };
    let n0 = noise_from_ebn0(ebn0_db, rate, 2.0);
    let eq = cfg.equalizer_for(link);
    let mode = if coded { Mode::Turbo } else { Mode::Uncoded };
    let per: Vec<Result<Vec<DegreeCdf>>> = (0..cfg.realizations as u64)
        .into_par_iter()
        .map(|r| {
            let frame = draw_frame(&ctx, cfg.paths, coded, r, n0)?;
            let (_, diags) = run_receiver(&ctx, mode, link, &eq, &frame, n0)?;
            Ok(diags
                .into_iter()
                .filter_map(|d| match d {
                    EstimateDiagnostics::Factorized { factor_degrees, .. } => Some(factor_degrees),
                    _ => None,
                })
                .collect())
        })
        .collect();
    let mut pooled: Vec<DegreeCdf> = Vec::new();
    for p in per {
        for (i, c) in p?.into_iter().enumerate() {
            match pooled.get_mut(i) {
                Some(acc) => acc.merge(&c),
                None => pooled.push(c),
            }
        }
    }
    Ok(pooled)
}

/// `F(D)` for `D` in `{0, P/2, P}` for both links.
pub fn run_sparsity(cfg: &SimConfig) -> Result<Vec<SparsityRecord>> {
    let p = cfg.paths as f64;
    let mut out = Vec::new();
    for link in [LinkKind::Turbo, LinkKind::Uncoded] {
        for &ebn0 in &cfg.ebn0_db {
            let pooled = factor_degrees(cfg, link, ebn0)?;
            for (i, cdf) in pooled.iter().enumerate() {
                for d in [0.0, p / 2.0, p] {
                    out.push(SparsityRecord {
                        link,
                        ebn0_db: ebn0,
                        outer_iteration: i + 2,
                        degree: d,
                        cdf: cdf.at(d),
                        frames: cfg.realizations,
                    });
                }
            }
        }
    }
    Ok(out)
}
