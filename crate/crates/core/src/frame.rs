//! Delay-Doppler framing with rectangular pulses.
//!
//! A frame is an `M x N` grid stored column-major: entry `(l, k)` (delay `l`,
//! Doppler `k`) lives at index `l + M*k`. All DFTs are unitary.

use crate::{Error, Result, C64};
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

/// Frame geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtfsGrid {
    /// Delay bins per frame.
    pub m: usize,
    /// Doppler bins per frame.
    pub n: usize,
    /// Cyclic prefix length in samples.
    pub cp_len: usize,
    /// Subcarrier spacing in Hz. Informational only.
    pub delta_f: f64,
    /// Symbol interval in seconds. Informational only.
    pub symbol_period: f64,
}

impl OtfsGrid {
    pub fn new(m: usize, n: usize, cp_len: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid dimensions must be positive (M={m}, N={n})"
            )));
        }
        let delta_f = 15e3;
        Ok(Self {
            m,
            n,
            cp_len,
            delta_f,
            symbol_period: 1.0 / delta_f,
        })
    }

    /// Number of symbols per frame, `M*N`.
    pub fn len(&self) -> usize {
        self.m * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Transmitted samples per frame including the cyclic prefix.
    pub fn signal_len(&self) -> usize {
        self.len() + self.cp_len
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: len,
            });
        }
        Ok(())
    }
}

struct Plans {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
}

impl Plans {
    fn new(len: usize, direction: FftDirection) -> Self {
        let fft = FftPlanner::new().plan_fft(len, direction);
        Self { fft, len }
    }

    fn run(&self, buf: &mut [C64]) {
        let mut scratch = vec![C64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        self.fft.process_with_scratch(buf, &mut scratch);
        let scale = 1.0 / (self.len as f64).sqrt();
        buf.iter_mut().for_each(|z| *z *= scale);
    }
}

/// Unitary DFT down every column (the delay axis) of a column-major grid.
fn transform_columns(grid: &OtfsGrid, data: &mut [C64], direction: FftDirection) {
    let plans = Plans::new(grid.m, direction);
    for col in data.chunks_exact_mut(grid.m) {
        plans.run(col);
    }
}

/// Unitary DFT along every row (the Doppler / time-slot axis).
fn transform_rows(grid: &OtfsGrid, data: &mut [C64], direction: FftDirection) {
    let (m, n) = (grid.m, grid.n);
    let plans = Plans::new(n, direction);
    let mut row = vec![C64::new(0.0, 0.0); n];
    for l in 0..m {
        for (k, r) in row.iter_mut().enumerate() {
            *r = data[l + m * k];
        }
        plans.run(&mut row);
        for (k, r) in row.iter().enumerate() {
            data[l + m * k] = *r;
        }
    }
}

/// `F_M X F_N^H`: delay-Doppler grid to time-frequency grid.
pub fn isfft(grid: &OtfsGrid, x_dd: &[C64]) -> Result<Vec<C64>> {
    grid.check(x_dd.len())?;
    let mut out = x_dd.to_vec();
    transform_columns(grid, &mut out, FftDirection::Forward);
    transform_rows(grid, &mut out, FftDirection::Inverse);
    Ok(out)
}

/// `F_M^H Y F_N`: time-frequency grid back to delay-Doppler.
pub fn sfft(grid: &OtfsGrid, y_tf: &[C64]) -> Result<Vec<C64>> {
    grid.check(y_tf.len())?;
    let mut out = y_tf.to_vec();
    transform_columns(grid, &mut out, FftDirection::Inverse);
    transform_rows(grid, &mut out, FftDirection::Forward);
    Ok(out)
}

/// Time-domain frame body `(F_N^H ⊗ I_M) x` without the cyclic prefix.
pub fn modulate_body(grid: &OtfsGrid, frame: &[C64]) -> Result<Vec<C64>> {
    grid.check(frame.len())?;
    let mut body = frame.to_vec();
    transform_rows(grid, &mut body, FftDirection::Inverse);
    Ok(body)
}

/// Time-domain transmit signal: the frame body preceded by its last
/// `cp_len` samples.
pub fn modulate(grid: &OtfsGrid, frame: &[C64]) -> Result<Vec<C64>> {
    let body = modulate_body(grid, frame)?;
    let mn = grid.len();
    let mut out = Vec::with_capacity(grid.signal_len());
    for i in 0..grid.cp_len {
        // CP longer than the body wraps around more than once.
        let idx = (mn - (grid.cp_len - i) % mn) % mn;
        out.push(body[idx]);
    }
    out.extend_from_slice(&body);
    Ok(out)
}

/// Drops the cyclic prefix from a received signal.
pub fn strip_cp(grid: &OtfsGrid, signal: &[C64]) -> Result<Vec<C64>> {
    if signal.len() != grid.signal_len() {
        return Err(Error::DimensionMismatch {
            expected: grid.signal_len(),
            found: signal.len(),
        });
    }
    Ok(signal[grid.cp_len..].to_vec())
}

/// `(F_N ⊗ I_M) y`: received body back to the delay-Doppler grid.
pub fn demodulate(grid: &OtfsGrid, y_body: &[C64]) -> Result<Vec<C64>> {
    grid.check(y_body.len())?;
    let mut out = y_body.to_vec();
    transform_rows(grid, &mut out, FftDirection::Forward);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn norm(v: &[C64]) -> f64 {
        v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    fn max_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    /// Direct evaluation of `F_M X F_N^H` from the DFT definition.
    fn isfft_direct(m: usize, n: usize, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); m * n];
        let scale = 1.0 / ((m * n) as f64).sqrt();
        for a in 0..m {
            for b in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for l in 0..m {
                    for k in 0..n {
                        let phase = -2.0 * PI * (a * l) as f64 / m as f64
                            + 2.0 * PI * (k * b) as f64 / n as f64;
                        acc += x[l + m * k] * C64::from_polar(1.0, phase);
                    }
                }
                out[a + m * b] = acc * scale;
            }
        }
        out
    }

    fn grid_vec(len: usize) -> impl Strategy<Value = Vec<C64>> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), len)
            .prop_map(|v| v.into_iter().map(|(r, i)| C64::new(r, i)).collect())
    }

    #[test]
    fn unit_symbol_spreads_evenly() {
        let grid = OtfsGrid::new(2, 2, 0).unwrap();
        let mut x = vec![C64::new(0.0, 0.0); 4];
        x[0] = C64::new(1.0, 0.0);
        let y = isfft(&grid, &x).unwrap();
        for z in y {
            assert!((z - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn isfft_matches_definition() {
        let (m, n) = (6, 5);
        let grid = OtfsGrid::new(m, n, 0).unwrap();
        let x: Vec<C64> = (0..m * n)
            .map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
            .collect();
        assert!(max_diff(&isfft(&grid, &x).unwrap(), &isfft_direct(m, n, &x)) < 1e-12);
    }

    #[test]
    fn zeros_stay_zero() {
        let grid = OtfsGrid::new(4, 3, 2).unwrap();
        let z = vec![C64::new(0.0, 0.0); 12];
        assert!(isfft(&grid, &z).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(sfft(&grid, &z).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(modulate(&grid, &z).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn single_slot_is_identity() {
        let grid = OtfsGrid::new(5, 1, 2).unwrap();
        let x: Vec<C64> = (0..5).map(|i| C64::new(i as f64, -(i as f64))).collect();
        let s = modulate(&grid, &x).unwrap();
        assert_eq!(&s[2..], &x[..]);
        assert_eq!(&s[..2], &x[3..]);
        assert_eq!(demodulate(&grid, &x).unwrap(), x);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let grid = OtfsGrid::new(4, 4, 1).unwrap();
        let x = vec![C64::new(0.0, 0.0); 15];
        assert!(matches!(
            isfft(&grid, &x),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            demodulate(&grid, &x),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(OtfsGrid::new(0, 4, 0).is_err());
    }

    proptest! {
        #[test]
        fn transforms_round_trip_and_preserve_norm(
            m in 1usize..9, n in 1usize..9, cp in 0usize..5, seed in grid_vec(64)
        ) {
            let grid = OtfsGrid::new(m, n, cp).unwrap();
            let x: Vec<C64> = seed.into_iter().cycle().take(m * n).collect();
            let tf = isfft(&grid, &x).unwrap();
            prop_assert!((norm(&tf) - norm(&x)).abs() < 1e-12);
            prop_assert!(max_diff(&sfft(&grid, &tf).unwrap(), &x) < 1e-12);
            let tf2 = sfft(&grid, &x).unwrap();
            prop_assert!((norm(&tf2) - norm(&x)).abs() < 1e-12);
            prop_assert!(max_diff(&isfft(&grid, &tf2).unwrap(), &x) < 1e-12);

            let s = modulate(&grid, &x).unwrap();
            prop_assert_eq!(s.len(), m * n + cp);
            let body = strip_cp(&grid, &s).unwrap();
            prop_assert!((norm(&body) - norm(&x)).abs() < 1e-12);
            prop_assert!(max_diff(&demodulate(&grid, &body).unwrap(), &x) < 1e-12);
        }
    }
}
