//! Photodetector model: finite-bandwidth low-pass plus additive Gaussian
//! read-out noise. Order is fixed: filter first, then noise.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, NoiseKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// -3 dB bandwidth (GHz).
    pub bandwidth: f64,
    /// Relative r.m.s. noise in units of the normalized signal S_x.
    pub sigma: f64,
    pub noise_seed: u64,
    pub n_taps: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            bandwidth: 30.0,
            sigma: 0.03,
            noise_seed: 2,
            n_taps: 101,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::invalid("bandwidth", "must be > 0"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::invalid("sigma", "must be >= 0"));
        }
        Ok(())
    }
}

/// Linear-phase FIR low-pass with unit DC gain.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    pub taps: Vec<f64>,
    /// Sample spacing the kernel was designed for (ns).
    pub dt: f64,
}

impl FilterKernel {
    pub fn half_width(&self) -> usize {
        self.taps.len() / 2
    }

    /// |H(f)| at `freq` GHz.
    pub fn magnitude_at(&self, freq: f64) -> f64 {
        let w = 2.0 * PI * freq * self.dt;
        let (re, im) = self
            .taps
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (k, &t)| {
                let phase = w * k as f64;
                (re + t * phase.cos(), im - t * phase.sin())
            });
        re.hypot(im)
    }
}

fn hamming_sinc(cutoff: f64, dt: f64, n_taps: usize) -> Vec<f64> {
    let fc = cutoff * dt; // cycles per sample
    let center = (n_taps / 2) as f64;
    let denom = (n_taps - 1) as f64;
    let mut taps: Vec<f64> = (0..n_taps)
        .map(|i| {
            let x = i as f64 - center;
            let ideal = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            ideal * (0.54 - 0.46 * (2.0 * PI * i as f64 / denom).cos())
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    // exact mirror symmetry regardless of rounding in sin/cos
    for i in 0..n_taps / 2 {
        let v = taps[i];
        taps[n_taps - 1 - i] = v;
    }
    taps
}

/// Hamming-windowed sinc low-pass whose response is 1/√2 (-3 dB) at
/// `bandwidth`. The sinc cutoff is found by bisection; the Hamming
/// transition band is wide at 101 taps, so putting the sinc cutoff itself
/// at `bandwidth` would leave only half amplitude there.
pub fn design_lowpass(bandwidth: f64, dt: f64, n_taps: usize) -> Result<FilterKernel> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", "must be > 0"));
    }
    if n_taps % 2 == 0 || n_taps < 11 {
        return Err(Error::invalid("n_taps", format!("{n_taps} is not odd and >= 11")));
    }
    let nyquist = 0.5 / dt;
    if !(bandwidth > 0.0) || bandwidth >= nyquist {
        return Err(Error::FilterDesign { bandwidth, nyquist });
    }
    let target = std::f64::consts::FRAC_1_SQRT_2;
    let mag = |cutoff: f64| {
        FilterKernel {
            taps: hamming_sinc(cutoff, dt, n_taps),
            dt,
        }
        .magnitude_at(bandwidth)
    };
    let (mut lo, mut hi) = (bandwidth, nyquist);
    let cutoff = if mag(lo) >= target || mag(hi) < target {
        bandwidth
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mag(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(FilterKernel {
        taps: hamming_sinc(cutoff, dt, n_taps),
        dt,
    })
}

fn check_dt(dt: f64, kernel: &FilterKernel) -> Result<()> {
    if (dt - kernel.dt).abs() > 1e-9 * kernel.dt.abs() {
        return Err(Error::DtMismatch {
            trace: dt,
            kernel: kernel.dt,
        });
    }
    Ok(())
}

/// Same-length convolution; samples past either end are replaced by the
/// nearest edge sample.
pub fn apply_filter(samples: &[f64], dt: f64, kernel: &FilterKernel) -> Result<Vec<f64>> {
    check_dt(dt, kernel)?;
    let h = kernel.half_width() as isize;
    let last = samples.len() as isize - 1;
    Ok((0..samples.len() as isize)
        .map(|i| {
            kernel
                .taps
                .iter()
                .enumerate()
                .map(|(k, &t)| t * samples[(i + k as isize - h).clamp(0, last) as usize])
                .sum()
        })
        .collect())
}

/// Streaming form of [`apply_filter`]: output `i` is emitted once input
/// `i + half_width` has arrived, and [`StreamingFilter::finish`] flushes
/// the tail with edge replication. Results are bit-identical to the batch
/// form.
#[derive(Debug, Clone)]
pub struct StreamingFilter {
    taps: Vec<f64>,
    window: VecDeque<f64>,
    last: Option<f64>,
}

impl StreamingFilter {
    pub fn new(kernel: &FilterKernel) -> Self {
        StreamingFilter {
            taps: kernel.taps.clone(),
            window: VecDeque::with_capacity(kernel.taps.len()),
            last: None,
        }
    }

    fn emit(&mut self) -> Option<f64> {
        if self.window.len() < self.taps.len() {
            return None;
        }
        let y = self
            .taps
            .iter()
            .zip(&self.window)
            .map(|(t, x)| t * x)
            .sum();
        self.window.pop_front();
        Some(y)
    }

    pub fn push(&mut self, x: f64) -> Option<f64> {
        if self.last.is_none() {
            let h = self.taps.len() / 2;
            self.window.extend(std::iter::repeat_n(x, h));
        }
        self.last = Some(x);
        self.window.push_back(x);
        self.emit()
    }

    pub fn finish(mut self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(x) = self.last {
            for _ in 0..self.taps.len() / 2 {
                self.window.push_back(x);
                out.extend(self.emit());
            }
        }
        out
    }
}

/// Sequential N(0, sigma_abs²) draws from the detector noise stream.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    rng: ChaCha8Rng,
    sigma_abs: f64,
}

impl GaussianNoise {
    pub fn new(sigma_abs: f64, seed: u64) -> Self {
        GaussianNoise {
            rng: NoiseKey::new(seed, Domain::Detector).stream(0),
            sigma_abs,
        }
    }

    #[inline]
    pub fn apply(&mut self, x: f64) -> f64 {
        if self.sigma_abs == 0.0 {
            return x;
        }
        x + self.sigma_abs * self.unit()
    }

    /// Next N(0, 1) draw, before scaling.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

pub fn add_noise(samples: &[f64], sigma_abs: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma_abs.is_finite() && sigma_abs >= 0.0) {
        return Err(Error::invalid("sigma_abs", "must be >= 0"));
    }
    let mut noise = GaussianNoise::new(sigma_abs, seed);
    Ok(samples.iter().map(|&x| noise.apply(x)).collect())
}

/// Per-sample noise level that gives an S_x spread of `sigma` when white
/// samples are summed over `window_samples` samples of spacing `dt` and
/// normalized by a mean total pulse energy `mean_energy`.
pub fn calibrate_sigma_abs(sigma: f64, mean_energy: f64, dt: f64, window_samples: usize) -> f64 {
    sigma * mean_energy / (dt * (window_samples as f64).sqrt())
}
