//! S_x statistics, min-entropy of the raw bits, the untrusted-window
//! probability P and the reduction factor Γ̃ = 1 / (H_min (1 − P)).

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::bits::BitStream;
use crate::error::{Error, Result};

/// Default window width in units of σ (window = 0.5 ± 3σ).
pub const DEFAULT_WINDOW_C: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.densities.len()
    }

    pub fn bin_width(&self, i: usize) -> f64 {
        self.bin_edges[i + 1] - self.bin_edges[i]
    }

    /// Σ density · width; 1 up to rounding.
    pub fn integral(&self) -> f64 {
        (0..self.n_bins())
            .map(|i| self.densities[i] * self.bin_width(i))
            .sum()
    }

    /// Probability mass of bins whose centers fall inside `[lo, hi]`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        (0..self.n_bins())
            .filter(|&i| {
                let mid = 0.5 * (self.bin_edges[i] + self.bin_edges[i + 1]);
                lo <= mid && mid <= hi
            })
            .map(|i| self.densities[i] * self.bin_width(i))
            .sum()
    }

    /// Largest density among bins whose centers fall inside `[lo, hi]`.
    pub fn max_density_between(&self, lo: f64, hi: f64) -> f64 {
        (0..self.n_bins())
            .filter(|&i| {
                let mid = 0.5 * (self.bin_edges[i] + self.bin_edges[i + 1]);
                lo <= mid && mid <= hi
            })
            .map(|i| self.densities[i])
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_left,bin_right,density")?;
        for i in 0..self.n_bins() {
            writeln!(
                out,
                "{},{},{}",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                self.densities[i]
            )?;
        }
        Ok(())
    }
}

/// Density histogram over `n_bins` uniform bins on [0, 1]. The value 1.0
/// lands in the last bin.
pub fn histogram(sx: &[f64], n_bins: usize) -> Result<Histogram> {
    if sx.is_empty() {
        return Err(Error::EmptyInput("histogram"));
    }
    if n_bins < 2 {
        return Err(Error::invalid("n_bins", "must be >= 2"));
    }
    let mut counts = vec![0u64; n_bins];
    for &v in sx {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid("sx", format!("value {v} outside [0, 1]")));
        }
        let i = ((v * n_bins as f64) as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
    let n = sx.len() as f64;
    let densities = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / (n * (bin_edges[i + 1] - bin_edges[i])))
        .collect();
    Ok(Histogram {
        bin_edges,
        densities,
    })
}

/// Per-bit worst-case min-entropy −log2(max(p0, p1)).
pub fn min_entropy(bits: &BitStream) -> f64 {
    if bits.is_empty() {
        return 0.0;
    }
    let ones = bits.count_ones();
    let p_max = ones.max(bits.len() - ones) as f64 / bits.len() as f64;
    // -log2(1) is -0.0
    (-p_max.log2()).max(0.0)
}

/// Closed window `[0.5 − cσ/2, 0.5 + cσ/2] ∩ [0, 1]`.
pub fn window_bounds(sigma: f64, c: f64) -> (f64, f64) {
    let half = 0.5 * c * sigma;
    ((0.5 - half).max(0.0), (0.5 + half).min(1.0))
}

/// Fraction of `sx` inside the untrusted window.
pub fn window_probability(sx: &[f64], sigma: f64, c: f64) -> f64 {
    if sx.is_empty() {
        return 0.0;
    }
    let (lo, hi) = window_bounds(sigma, c);
    sx.iter().filter(|&&v| lo <= v && v <= hi).count() as f64 / sx.len() as f64
}

pub fn reduction_factor(h_min: f64, p_window: f64) -> Result<f64> {
    if !(h_min > 0.0) || !(p_window < 1.0) {
        return Err(Error::NoExtractableEntropy { h_min, p_window });
    }
    Ok(1.0 / (h_min * (1.0 - p_window)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub h_min: f64,
    pub p_window: f64,
    pub gamma_tilde: f64,
    pub sigma: f64,
    pub window_c: f64,
    pub window_width: f64,
    pub n_bits: usize,
    pub ones_fraction: f64,
}

impl EntropyReport {
    pub fn compute(bits: &BitStream, sx: &[f64], sigma: f64, c: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !(c > 0.0) {
            return Err(Error::invalid("sigma/c", "need sigma >= 0 and c > 0"));
        }
        if bits.is_empty() {
            return Err(Error::NoExtractableEntropy {
                h_min: 0.0,
                p_window: window_probability(sx, sigma, c),
            });
        }
        let h_min = min_entropy(bits);
        let p_window = window_probability(sx, sigma, c);
        let gamma_tilde = reduction_factor(h_min, p_window)?;
        let (lo, hi) = window_bounds(sigma, c);
        Ok(EntropyReport {
            h_min,
            p_window,
            gamma_tilde,
            sigma,
            window_c: c,
            window_width: hi - lo,
            n_bits: bits.len(),
            ones_fraction: bits.count_ones() as f64 / bits.len() as f64,
        })
    }
}
