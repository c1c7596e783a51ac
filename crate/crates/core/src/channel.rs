//! Doubly selective multipath channels: random sampling, time-domain
//! application through the cyclic prefix, and the effective delay-Doppler
//! channel matrix.

use crate::frame::OtfsGrid;
use crate::sparse::{CscMatrix, DENSE_LIMIT};
use crate::{Error, Result, C64};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    /// Complex gain.
    pub gain: C64,
    /// Delay tap.
    pub delay: usize,
    /// Integer Doppler tap.
    pub doppler: i64,
    /// Fractional Doppler offset in `[-1/2, 1/2]`.
    pub kappa: f64,
}

impl Path {
    pub fn integer(gain: C64, delay: usize, doppler: i64) -> Self {
        Self {
            gain,
            delay,
            doppler,
            kappa: 0.0,
        }
    }

    /// Total Doppler shift in taps, `k + kappa`.
    pub fn doppler_shift(&self) -> f64 {
        self.doppler as f64 + self.kappa
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub paths: Vec<Path>,
}

impl ChannelRealization {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InvalidParameter(
                "a channel needs at least one path".into(),
            ));
        }
        Ok(Self { paths })
    }

    pub fn max_delay(&self) -> usize {
        self.paths.iter().map(|p| p.delay).max().unwrap_or(0)
    }

    pub fn is_integer(&self) -> bool {
        self.paths.iter().all(|p| p.kappa == 0.0)
    }

    fn check_grid(&self, grid: &OtfsGrid) -> Result<()> {
        for p in &self.paths {
            if p.delay >= grid.m {
                return Err(Error::InvalidParameter(format!(
                    "delay tap {} does not fit {} delay bins",
                    p.delay, grid.m
                )));
            }
            if !(p.kappa.abs() <= 0.5) {
                return Err(Error::InvalidParameter(format!(
                    "fractional Doppler {} outside [-1/2, 1/2]",
                    p.kappa
                )));
            }
        }
        Ok(())
    }
}

/// Ensemble the realizations are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStatistics {
    pub paths: usize,
    pub l_max: usize,
    pub k_max: usize,
    /// Jakes-distributed continuous Doppler instead of uniform integer taps.
    pub fractional: bool,
    /// Expected power of each path; sums to one.
    pub power_profile: Vec<f64>,
}

impl ChannelStatistics {
    /// Uniform power profile `1/P`.
    pub fn uniform(paths: usize, l_max: usize, k_max: usize, fractional: bool) -> Self {
        Self {
            paths,
            l_max,
            k_max,
            fractional,
            power_profile: vec![1.0 / paths.max(1) as f64; paths],
        }
    }

    pub fn validate(&self, grid: &OtfsGrid) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidParameter(
                "path count must be positive".into(),
            ));
        }
        if self.l_max >= grid.m {
            return Err(Error::InvalidParameter(format!(
                "l_max = {} must be below M = {}",
                self.l_max, grid.m
            )));
        }
        if self.k_max > grid.n / 2 {
            return Err(Error::InvalidParameter(format!(
                "k_max = {} exceeds N/2 = {}",
                self.k_max,
                grid.n / 2
            )));
        }
        if self.power_profile.len() != self.paths {
            return Err(Error::InvalidParameter(
                "power profile length differs from P".into(),
            ));
        }
        let total: f64 = self.power_profile.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.power_profile.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidParameter(
                "power profile must sum to one".into(),
            ));
        }
        Ok(())
    }
}

/// Draws a realization: Rayleigh gains with the configured powers, uniform
/// delays, and either uniform integer Doppler taps or Jakes-distributed
/// Doppler split into an integer and a fractional part.
pub fn sample_channel<R: Rng + ?Sized>(
    stats: &ChannelStatistics,
    grid: &OtfsGrid,
    rng: &mut R,
) -> Result<ChannelRealization> {
    stats.validate(grid)?;
    let k_max = stats.k_max as i64;
    let paths = stats
        .power_profile
        .iter()
        .map(|&power| {
            let sd = (power / 2.0).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let gain = C64::new(re * sd, im * sd);
            let delay = rng.random_range(0..=stats.l_max);
            if stats.fractional {
                let theta = rng.random_range(-PI..=PI);
                let nu = stats.k_max as f64 * theta.cos();
                let k = nu.round();
                Path {
                    gain,
                    delay,
                    doppler: k as i64,
                    kappa: nu - k,
                }
            } else {
                Path::integer(gain, delay, rng.random_range(-k_max..=k_max))
            }
        })
        .collect();
    ChannelRealization::new(paths)
}

/// `exp(j 2 pi nu t / (MN))`.
fn doppler_phase(nu: f64, t: i64, mn: usize) -> C64 {
    C64::from_polar(1.0, 2.0 * PI * nu * t as f64 / mn as f64)
}

/// Passes a CP-prefixed signal through the channel and adds `CN(0, n0)`
/// noise. Samples before the start of the signal are taken as zero, so the
/// returned prefix region is partially corrupted while the body sees the
/// cyclic channel.
pub fn apply_channel<R: Rng + ?Sized>(
    grid: &OtfsGrid,
    chan: &ChannelRealization,
    signal: &[C64],
    n0: f64,
    rng: &mut R,
) -> Result<Vec<C64>> {
    chan.check_grid(grid)?;
    if grid.cp_len <= chan.max_delay() {
        return Err(Error::CyclicPrefixTooShort {
            cp_len: grid.cp_len,
            max_delay: chan.max_delay(),
        });
    }
    if signal.len() != grid.signal_len() {
        return Err(Error::DimensionMismatch {
            expected: grid.signal_len(),
            found: signal.len(),
        });
    }
    let mn = grid.len();
    let cp = grid.cp_len as i64;
    let mut out = vec![C64::new(0.0, 0.0); signal.len()];
    for p in &chan.paths {
        let nu = p.doppler_shift();
        for i in p.delay..signal.len() {
            // Body time index of the output sample minus the delay.
            let t = i as i64 - cp - p.delay as i64;
            out[i] += p.gain * doppler_phase(nu, t, mn) * signal[i - p.delay];
        }
    }
    if n0 > 0.0 {
        let sd = (n0 / 2.0).sqrt();
        for y in &mut out {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *y += C64::new(re * sd, im * sd);
        }
    }
    Ok(out)
}

/// Sparse time-domain channel matrix acting on the frame body:
/// entry `(n, [n - l]_MN)` of path `(h, l, nu)` is `h exp(j 2 pi nu (n - l) / MN)`.
/// With integer Doppler this is `sum_p h_p Pi^{l_p} Delta^{k_p}`.
pub fn time_matrix_sparse(grid: &OtfsGrid, chan: &ChannelRealization) -> Result<CscMatrix> {
    chan.check_grid(grid)?;
    let mn = grid.len();
    let mut t = Vec::with_capacity(mn * chan.paths.len());
    for p in &chan.paths {
        let nu = p.doppler_shift();
        for n in 0..mn {
            let shifted = n as i64 - p.delay as i64;
            let col = shifted.rem_euclid(mn as i64) as usize;
            t.push((n, col, p.gain * doppler_phase(nu, shifted, mn)));
        }
    }
    CscMatrix::from_triplets(mn, mn, t)
}

/// Dense time-domain channel matrix, for reference computations only.
pub fn build_time_matrix(grid: &OtfsGrid, chan: &ChannelRealization) -> Result<DMatrix<C64>> {
    if grid.len() > DENSE_LIMIT {
        return Err(Error::TooLarge {
            n: grid.len(),
            limit: DENSE_LIMIT,
        });
    }
    time_matrix_sparse(grid, chan)?.to_dense()
}

/// Dirichlet sum `sum_{t=0}^{N-1} exp(j 2 pi t x / N)`.
fn dirichlet(x: f64, n: usize) -> C64 {
    let nf = n as f64;
    let r = x.rem_euclid(nf);
    if r.abs() < 1e-12 || (nf - r).abs() < 1e-12 {
        return C64::new(nf, 0.0);
    }
    let mag = (PI * x).sin() / (PI * x / nf).sin();
    C64::from_polar(mag, PI * x * (nf - 1.0) / nf)
}

/// Effective delay-Doppler channel `(F_N ⊗ I_M) H_T (F_N^H ⊗ I_M)` in closed
/// form. Integer Doppler yields one entry per path per column. Fractional
/// Doppler spreads each path over Doppler bins; only the `2*trunc + 1` bins
/// nearest the path's integer tap are kept (all `N` once `trunc >= N/2`).
pub fn build_dd_matrix(
    grid: &OtfsGrid,
    chan: &ChannelRealization,
    trunc: usize,
) -> Result<CscMatrix> {
    chan.check_grid(grid)?;
    let (m, n) = (grid.m, grid.n);
    let mn = grid.len();
    let mut t = Vec::new();
    for p in &chan.paths {
        let nu = p.doppler_shift();
        let offsets: Vec<i64> = if p.kappa == 0.0 {
            vec![0]
        } else {
            let half = (n as i64 - 1) / 2;
            let upper = (n as i64 / 2).min(trunc as i64);
            // Offsets -half..=n/2 enumerate every residue once.
            (-(half.min(trunc as i64))..=upper).collect()
        };
        for ka in 0..n {
            for la in 0..m {
                let wraps = la < p.delay;
                let lb = (la + m - p.delay) % m;
                let phase_delay = doppler_phase(nu, la as i64 - p.delay as i64, mn);
                for &d in &offsets {
                    let kb = (ka as i64 - p.doppler + d).rem_euclid(n as i64) as usize;
                    let spread = if p.kappa == 0.0 {
                        C64::new(1.0, 0.0)
                    } else {
                        dirichlet(p.kappa + d as f64, n) / n as f64
                    };
                    let wrap = if wraps {
                        C64::from_polar(1.0, -2.0 * PI * kb as f64 / n as f64)
                    } else {
                        C64::new(1.0, 0.0)
                    };
                    t.push((
                        la + m * ka,
                        lb + m * kb,
                        p.gain * phase_delay * wrap * spread,
                    ));
                }
            }
        }
    }
    CscMatrix::from_triplets(mn, mn, t)
}

/// Dense `(F_N ⊗ I_M) H_T (F_N^H ⊗ I_M)` by explicit conjugation; reference
/// only.
pub fn dd_matrix_by_conjugation(
    grid: &OtfsGrid,
    chan: &ChannelRealization,
) -> Result<DMatrix<C64>> {
    let ht = build_time_matrix(grid, chan)?;
    let (m, n) = (grid.m, grid.n);
    let mn = grid.len();
    let scale = 1.0 / (n as f64).sqrt();
    let u = DMatrix::from_fn(mn, mn, |a, b| {
        if a % m != b % m {
            return C64::new(0.0, 0.0);
        }
        let (k, t) = (a / m, b / m);
        C64::from_polar(scale, -2.0 * PI * (k * t) as f64 / n as f64)
    });
    Ok(&u * ht * u.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{demodulate, modulate, modulate_body, strip_cp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_signal(len: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..len)
            .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    fn max_dense_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_channel_passes_signal() {
        let grid = OtfsGrid::new(4, 4, 2).unwrap();
        let chan = ChannelRealization::new(vec![Path::integer(c(1.0, 0.0), 0, 0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_signal(grid.signal_len(), &mut rng);
        assert_eq!(apply_channel(&grid, &chan, &x, 0.0, &mut rng).unwrap(), x);
        let ht = build_time_matrix(&grid, &chan).unwrap();
        assert_eq!(ht, DMatrix::identity(16, 16));
    }

    #[test]
    fn pure_delay_shifts_the_body_cyclically() {
        let grid = OtfsGrid::new(4, 3, 3).unwrap();
        let chan = ChannelRealization::new(vec![Path::integer(c(1.0, 0.0), 2, 0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame = random_signal(12, &mut rng);
        let s = modulate(&grid, &frame).unwrap();
        let body = modulate_body(&grid, &frame).unwrap();
        let y = strip_cp(
            &grid,
            &apply_channel(&grid, &chan, &s, 0.0, &mut rng).unwrap(),
        )
        .unwrap();
        for n in 0..12 {
            assert!((y[n] - body[(n + 12 - 2) % 12]).norm() < 1e-15);
        }
    }

    #[test]
    fn forward_cyclic_shift_convention() {
        let grid = OtfsGrid::new(3, 2, 2).unwrap();
        let chan = ChannelRealization::new(vec![Path::integer(c(1.0, 0.0), 1, 0)]).unwrap();
        let ht = build_time_matrix(&grid, &chan).unwrap();
        let e0 = DMatrix::from_fn(6, 1, |i, _| c(if i == 0 { 1.0 } else { 0.0 }, 0.0));
        let moved = &ht * e0;
        assert_eq!(moved[(1, 0)], c(1.0, 0.0));
        assert_eq!(moved.iter().filter(|z| z.norm() > 0.0).count(), 1);
    }

    #[test]
    fn body_matches_time_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for fractional in [false, true] {
            let grid = OtfsGrid::new(8, 4, 5).unwrap();
            let stats = ChannelStatistics::uniform(4, 4, 2, fractional);
            let chan = sample_channel(&stats, &grid, &mut rng).unwrap();
            let frame = random_signal(32, &mut rng);
            let s = modulate(&grid, &frame).unwrap();
            let body = modulate_body(&grid, &frame).unwrap();
            let y = apply_channel(&grid, &chan, &s, 0.0, &mut rng).unwrap();
            let y = strip_cp(&grid, &y).unwrap();
            let ht = build_time_matrix(&grid, &chan).unwrap();
            let expect = ht * nalgebra::DVector::from_vec(body);
            for (a, b) in y.iter().zip(expect.iter()) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn integer_closed_form_matches_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = OtfsGrid::new(8, 4, 4).unwrap();
        for _ in 0..20 {
            let stats = ChannelStatistics::uniform(3, 3, 2, false);
            let chan = sample_channel(&stats, &grid, &mut rng).unwrap();
            let h = build_dd_matrix(&grid, &chan, 0).unwrap();
            let d = dd_matrix_by_conjugation(&grid, &chan).unwrap();
            assert!(max_dense_diff(&h.to_dense().unwrap(), &d) < 1e-10);
        }
    }

    #[test]
    fn fractional_full_window_matches_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (m, n) in [(8, 4), (6, 5), (4, 8)] {
            let grid = OtfsGrid::new(m, n, 4).unwrap();
            let stats = ChannelStatistics::uniform(3, 3, n / 2, true);
            let chan = sample_channel(&stats, &grid, &mut rng).unwrap();
            let h = build_dd_matrix(&grid, &chan, n / 2).unwrap();
            let d = dd_matrix_by_conjugation(&grid, &chan).unwrap();
            assert!(max_dense_diff(&h.to_dense().unwrap(), &d) < 1e-10);
        }
    }

    #[test]
    fn truncation_limits_the_doppler_spread() {
        let grid = OtfsGrid::new(4, 16, 2).unwrap();
        let chan = ChannelRealization::new(vec![Path {
            gain: c(1.0, 0.0),
            delay: 1,
            doppler: 2,
            kappa: 0.3,
        }])
        .unwrap();
        for trunc in [0, 1, 3] {
            let h = build_dd_matrix(&grid, &chan, trunc).unwrap();
            for j in 0..grid.len() {
                assert_eq!(h.col(j).0.len(), 2 * trunc + 1);
            }
        }
        assert_eq!(build_dd_matrix(&grid, &chan, 8).unwrap().col(0).0.len(), 16);
        assert_eq!(
            build_dd_matrix(&grid, &chan, 40).unwrap().col(0).0.len(),
            16
        );
    }

    #[test]
    fn one_entry_per_path_and_permutation_pattern() {
        let grid = OtfsGrid::new(6, 5, 3).unwrap();
        let paths = vec![
            Path::integer(c(0.5, 0.1), 0, 1),
            Path::integer(c(-0.2, 0.7), 2, -2),
            Path::integer(c(0.3, -0.3), 1, 0),
        ];
        let chan = ChannelRealization::new(paths.clone()).unwrap();
        let h = build_dd_matrix(&grid, &chan, 0).unwrap();
        for j in 0..30 {
            assert_eq!(h.col(j).0.len(), 3);
        }
        // Each path alone is supported on (Pi_N^k ⊗ Pi_M^l).
        for p in paths {
            let single = ChannelRealization::new(vec![p]).unwrap();
            let hp = build_dd_matrix(&grid, &single, 0).unwrap();
            for kb in 0..5 {
                for lb in 0..6 {
                    let (rows, _) = hp.col(lb + 6 * kb);
                    let la = (lb + p.delay) % 6;
                    let ka = (kb as i64 + p.doppler).rem_euclid(5) as usize;
                    assert_eq!(rows, &[la + 6 * ka]);
                }
            }
        }
    }

    #[test]
    fn dd_matrix_reproduces_the_link() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let grid = OtfsGrid::new(16, 8, 6).unwrap();
        let stats = ChannelStatistics::uniform(5, 5, 3, false);
        let chan = sample_channel(&stats, &grid, &mut rng).unwrap();
        let frame = random_signal(grid.len(), &mut rng);
        let s = modulate(&grid, &frame).unwrap();
        let y = apply_channel(&grid, &chan, &s, 0.0, &mut rng).unwrap();
        let y_dd = demodulate(&grid, &strip_cp(&grid, &y).unwrap()).unwrap();
        let h = build_dd_matrix(&grid, &chan, 0).unwrap();
        for (a, b) in y_dd.iter().zip(h.mul_vec(&frame)) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn sampling_respects_the_ensemble() {
        let grid = OtfsGrid::new(64, 32, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for fractional in [false, true] {
            let stats = ChannelStatistics::uniform(8, 10, 6, fractional);
            for _ in 0..200 {
                let chan = sample_channel(&stats, &grid, &mut rng).unwrap();
                assert_eq!(chan.paths.len(), 8);
                for p in &chan.paths {
                    assert!(p.delay <= 10);
                    assert!(p.doppler_shift().abs() <= 6.0 + 1e-12);
                    assert!(p.kappa.abs() <= 0.5);
                    if !fractional {
                        assert_eq!(p.kappa, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn average_power_is_one() {
        let grid = OtfsGrid::new(16, 8, 4).unwrap();
        let stats = ChannelStatistics::uniform(4, 3, 2, false);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = 100_000;
        let total: f64 = (0..draws)
            .map(|_| {
                let ch = sample_channel(&stats, &grid, &mut rng).unwrap();
                ch.paths.iter().map(|p| p.gain.norm_sqr()).sum::<f64>()
            })
            .sum();
        assert!((total / draws as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let grid = OtfsGrid::new(8, 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(
            sample_channel(&ChannelStatistics::uniform(0, 2, 1, false), &grid, &mut rng).is_err()
        );
        assert!(
            sample_channel(&ChannelStatistics::uniform(2, 8, 1, false), &grid, &mut rng).is_err()
        );
        assert!(
            sample_channel(&ChannelStatistics::uniform(2, 2, 3, false), &grid, &mut rng).is_err()
        );
        let chan = ChannelRealization::new(vec![Path::integer(c(1.0, 0.0), 2, 0)]).unwrap();
        let x = vec![c(0.0, 0.0); grid.signal_len()];
        assert!(matches!(
            apply_channel(&grid, &chan, &x, 0.0, &mut rng),
            Err(Error::CyclicPrefixTooShort { .. })
        ));
    }

    #[test]
    fn channel_is_linear() {
        let grid = OtfsGrid::new(8, 4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let chan =
            sample_channel(&ChannelStatistics::uniform(3, 3, 2, true), &grid, &mut rng).unwrap();
        let a = random_signal(grid.signal_len(), &mut rng);
        let b = random_signal(grid.signal_len(), &mut rng);
        let sum: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x + 2.0 * y).collect();
        let ya = apply_channel(&grid, &chan, &a, 0.0, &mut rng).unwrap();
        let yb = apply_channel(&grid, &chan, &b, 0.0, &mut rng).unwrap();
        let ys = apply_channel(&grid, &chan, &sum, 0.0, &mut rng).unwrap();
        for i in 0..ys.len() {
            assert!((ys[i] - ya[i] - 2.0 * yb[i]).norm() < 1e-12);
        }
    }
}
