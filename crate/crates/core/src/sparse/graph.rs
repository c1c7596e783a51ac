//! Graph view of a sparsity pattern: degree statistics and the two pruning
//! rules (edge thresholding after Jacobi scaling, then low-degree node removal).

use super::matrix::SparseHermitianMatrix;
use crate::{Error, Result};

/// Histogram and CDF of node degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeCdf {
    /// `counts[d]` nodes have degree `d`, for `d = 0..n-1`.
    pub counts: Vec<usize>,
    /// `cdf[d]` is the fraction of nodes with degree at most `d`.
    pub cdf: Vec<f64>,
}

impl DegreeCdf {
    /// Builds the distribution of `degrees` over a graph of `n` nodes.
    pub fn from_degrees(degrees: &[usize], n: usize) -> Self {
        let mut counts = vec![0usize; n.max(1)];
        for &d in degrees {
            assert!(d < n, "degree {d} impossible with {n} nodes");
            counts[d] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn from_counts(counts: Vec<usize>) -> Self {
        let total: usize = counts.iter().sum();
        let mut acc = 0usize;
        let cdf = counts
            .iter()
            .map(|&c| {
                acc += c;
                if total == 0 {
                    1.0
                } else {
                    acc as f64 / total as f64
                }
            })
            .collect();
        Self { counts, cdf }
    }

    /// Pools the histograms of several graphs with the same node count.
    pub fn merge(&mut self, other: &DegreeCdf) {
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        *self = Self::from_counts(std::mem::take(&mut self.counts));
    }

    /// `F(d)` for a possibly fractional threshold.
    pub fn at(&self, d: f64) -> f64 {
        if d < 0.0 {
            return 0.0;
        }
        let idx = (d.floor() as usize).min(self.cdf.len() - 1);
        self.cdf[idx]
    }

    pub fn nodes(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Degree distribution of the off-diagonal pattern of `a`.
pub fn degree_cdf(a: &SparseHermitianMatrix) -> DegreeCdf {
    DegreeCdf::from_degrees(&a.degrees(), a.n())
}

/// Drops every off-diagonal entry whose Jacobi-scaled magnitude
/// `|a_ij| / sqrt(a_ii a_jj)` is at most `eps_a`.
pub fn jacobi_sparsify(a: &SparseHermitianMatrix, eps_a: f64) -> Result<SparseHermitianMatrix> {
    let scale: Vec<f64> = (0..a.n())
        .map(|i| {
            let d = a.diag(i);
            if d.re > 0.0 && d.norm() > 0.0 {
                Ok(1.0 / d.norm().sqrt())
            } else {
                Err(Error::NonPositiveDiagonal {
                    index: i,
                    value: d.re,
                })
            }
        })
        .collect::<Result<_>>()?;
    Ok(a.retain(|i, j, v| i == j || v.norm() * (scale[i] * scale[j]) > eps_a))
}

/// Disconnects every node whose degree is at most `eps_d`, using the degrees
/// of the input in a single pass. A negative threshold keeps everything.
pub fn node_sparsify(a: &SparseHermitianMatrix, eps_d: f64) -> SparseHermitianMatrix {
    let cut: Vec<bool> = a.degrees().iter().map(|&d| d as f64 <= eps_d).collect();
    a.retain(|i, j, _| i == j || !(cut[i] || cut[j]))
}
