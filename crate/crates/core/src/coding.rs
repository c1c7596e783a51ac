//! Feedforward convolutional coding, random interleaving, QPSK mapping and a
//! log-MAP soft-in soft-out decoder.
//!
//! LLRs follow `L = ln P(bit = 0) / P(bit = 1)`.

use crate::{Error, Result, C64};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_1_SQRT_2;

/// Default magnitude cap applied to extrinsic LLRs.
pub const DEFAULT_LLR_CLIP: f64 = 30.0;

/// Rate `1/len(generators)` feedforward code.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeConfig {
    /// Generator polynomials, most significant bit on the current input.
    pub generators: Vec<u32>,
    pub constraint_length: usize,
    /// Append `constraint_length - 1` zero tail bits.
    pub terminated: bool,
    pub llr_clip: f64,
}

impl Default for CodeConfig {
    /// The (5, 7) octal code with constraint length 3, terminated.
    fn default() -> Self {
        Self {
            generators: vec![0o5, 0o7],
            constraint_length: 3,
            terminated: true,
            llr_clip: DEFAULT_LLR_CLIP,
        }
    }
}

impl CodeConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.constraint_length;
        if !(1..=16).contains(&k) {
            return Err(Error::InvalidParameter(format!(
                "constraint length {k} out of range"
            )));
        }
        if self.generators.is_empty() || self.generators.iter().any(|&g| g == 0 || g >= 1 << k) {
            return Err(Error::InvalidParameter(
                "generators must be nonzero and fit the constraint length".into(),
            ));
        }
        if !(self.llr_clip > 0.0) {
            return Err(Error::InvalidParameter("llr_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn memory(&self) -> usize {
        self.constraint_length - 1
    }

    pub fn outputs(&self) -> usize {
        self.generators.len()
    }

    pub fn rate(&self) -> f64 {
        1.0 / self.outputs() as f64
    }

    fn tail(&self) -> usize {
        if self.terminated {
            self.memory()
        } else {
            0
        }
    }

    /// Coded length for `k1` information bits.
    pub fn coded_len(&self, k1: usize) -> usize {
        (k1 + self.tail()) * self.outputs()
    }

    /// Largest information length whose codeword fits in `coded` bits.
    pub fn info_len_for(&self, coded: usize) -> Result<usize> {
        let steps = coded / self.outputs();
        if steps * self.outputs() != coded || steps <= self.tail() {
            return Err(Error::InvalidParameter(format!(
                "{coded} coded bits do not fit the code"
            )));
        }
        Ok(steps - self.tail())
    }

    fn states(&self) -> usize {
        1 << self.memory()
    }

    /// Output bits for input `u` leaving `state` (the last `memory` inputs,
    /// most recent in the high bit).
    fn branch(&self, state: usize, u: u8) -> (usize, Vec<u8>) {
        let mem = self.memory();
        let reg = ((u as usize) << mem) | state;
        let out = self
            .generators
            .iter()
            .map(|&g| ((reg as u32 & g).count_ones() & 1) as u8)
            .collect();
        (reg >> 1, out)
    }
}

/// Encodes `u`, appending tail bits when terminated. Outputs of the
/// generators are interleaved per input bit.
pub fn conv_encode(cfg: &CodeConfig, u: &[u8]) -> Vec<u8> {
    let mut state = 0usize;
    let mut out = Vec::with_capacity(cfg.coded_len(u.len()));
    let tail = std::iter::repeat_n(0u8, cfg.tail());
    for bit in u.iter().copied().chain(tail) {
        let (next, bits) = cfg.branch(state, bit & 1);
        out.extend(bits);
        state = next;
    }
    out
}

/// Seeded uniformly random permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    /// Fisher-Yates shuffle driven by a ChaCha stream seeded with `seed`.
    pub fn new(len: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// `out[i] = v[perm[i]]`.
    pub fn interleave<T: Copy>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.perm.len());
        self.perm.iter().map(|&p| v[p]).collect()
    }

    /// Inverse of [`Self::interleave`].
    pub fn deinterleave<T: Copy>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.perm.len());
        let mut out = v.to_vec();
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = v[i];
        }
        out
    }
}

/// Gray-labelled QPSK points `((1 - 2 b1) + i (1 - 2 b2)) / sqrt(2)`.
pub fn qpsk_alphabet() -> [(C64, [u8; 2]); 4] {
    [[0, 0], [0, 1], [1, 0], [1, 1]].map(|b| (qpsk_symbol(b[0], b[1]), b))
}

fn qpsk_symbol(b1: u8, b2: u8) -> C64 {
    let s = |b: u8| {
        if b == 0 {
            FRAC_1_SQRT_2
        } else {
            -FRAC_1_SQRT_2
        }
    };
    C64::new(s(b1), s(b2))
}

/// Maps consecutive bit pairs to QPSK symbols.
pub fn qpsk_map(bits: &[u8]) -> Result<Vec<C64>> {
    if bits.len() % 2 != 0 {
        return Err(Error::InvalidParameter(
            "QPSK needs an even number of bits".into(),
        ));
    }
    Ok(bits
        .chunks_exact(2)
        .map(|p| qpsk_symbol(p[0], p[1]))
        .collect())
}

/// Decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct SisoOutput {
    /// Extrinsic LLRs of the coded bits, clipped.
    pub extrinsic: Vec<f64>,
    /// A posteriori LLRs of the coded bits, unclipped.
    pub app_coded: Vec<f64>,
    /// A posteriori LLRs of the information bits.
    pub app_info: Vec<f64>,
    /// Hard information-bit decisions.
    pub decisions: Vec<u8>,
}

/// `ln(e^a + e^b)`.
fn max_star(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

/// Exact log-MAP (BCJR) decoding from a priori LLRs on the coded bits.
pub fn siso_decode(cfg: &CodeConfig, la: &[f64]) -> Result<SisoOutput> {
    cfg.validate()?;
    let n_out = cfg.outputs();
    let k1 = cfg.info_len_for(la.len())?;
    if la.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "a priori LLRs must be finite".into(),
        ));
    }
    let steps = k1 + cfg.tail();
    let states = cfg.states();
    let trellis: Vec<[(usize, Vec<u8>); 2]> = (0..states)
        .map(|s| [cfg.branch(s, 0), cfg.branch(s, 1)])
        .collect();
    // Branch metric of output bits, skipping index `skip`.
    let metric = |t: usize, out: &[u8], skip: Option<usize>| -> f64 {
        out.iter()
            .enumerate()
            .filter(|&(j, _)| Some(j) != skip)
            .map(|(j, &b)| {
                let l = la[t * n_out + j];
                if b == 0 {
                    0.5 * l
                } else {
                    -0.5 * l
                }
            })
            .sum()
    };
    let tail_only = |t: usize| t >= k1;

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![vec![ninf; states]; steps + 1];
    alpha[0][0] = 0.0;
    for t in 0..steps {
        for s in 0..states {
            if alpha[t][s] == ninf {
                continue;
            }
            for u in 0..2 {
                if u == 1 && tail_only(t) {
                    continue;
                }
                let (next, out) = &trellis[s][u];
                let v = alpha[t][s] + metric(t, out, None);
                alpha[t + 1][*next] = max_star(alpha[t + 1][*next], v);
            }
        }
        normalize(&mut alpha[t + 1]);
    }
    let mut beta = vec![vec![ninf; states]; steps + 1];
    if cfg.terminated {
        beta[steps][0] = 0.0;
    } else {
        beta[steps].iter_mut().for_each(|b| *b = 0.0);
    }
    for t in (0..steps).rev() {
        for s in 0..states {
            for u in 0..2 {
                if u == 1 && tail_only(t) {
                    continue;
                }
                let (next, out) = &trellis[s][u];
                if beta[t + 1][*next] == ninf {
                    continue;
                }
                let v = beta[t + 1][*next] + metric(t, out, None);
                beta[t][s] = max_star(beta[t][s], v);
            }
        }
        normalize(&mut beta[t]);
    }

    let clip = cfg.llr_clip;
    let mut extrinsic = vec![0.0; la.len()];
    let mut app_coded = vec![0.0; la.len()];
    let mut app_info = vec![0.0; k1];
    for t in 0..steps {
        let mut info = [ninf; 2];
        let mut ext = vec![[ninf; 2]; n_out];
        for s in 0..states {
            if alpha[t][s] == ninf {
                continue;
            }
            for u in 0..2 {
                if u == 1 && tail_only(t) {
                    continue;
                }
                let (next, out) = &trellis[s][u];
                let base = alpha[t][s] + beta[t + 1][*next];
                if base == ninf {
                    continue;
                }
                info[u] = max_star(info[u], base + metric(t, out, None));
                for (j, &b) in out.iter().enumerate() {
                    let e = &mut ext[j][b as usize];
                    *e = max_star(*e, base + metric(t, out, Some(j)));
                }
            }
        }
        if t < k1 {
            app_info[t] = info[0] - info[1];
        }
        for j in 0..n_out {
            let i = t * n_out + j;
            let le = ext[j][0] - ext[j][1];
            app_coded[i] = le + la[i];
            extrinsic[i] = le.clamp(-clip, clip);
        }
    }
    let decisions = app_info.iter().map(|&l| u8::from(l < 0.0)).collect();
    Ok(SisoOutput {
        extrinsic,
        app_coded,
        app_info,
        decisions,
    })
}

fn normalize(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_finite() {
        v.iter_mut().for_each(|x| *x -= m);
    }
}
