//! Eight tests from NIST SP 800-22 (monobit, block frequency, runs, longest
//! run of ones, cumulative sums, approximate entropy, serial, DFT spectral)
//! and a multi-sequence suite runner with pass proportions and p-value
//! uniformity.

pub mod special;

use std::io::{self, Write};

use rayon::prelude::*;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::bits::BitStream;
use crate::error::{Error, Result};
use special::{erfc, gamma_q, normal_cdf};

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const BLOCK_FREQUENCY_M: usize = 128;
pub const APEN_M: usize = 2;
pub const SERIAL_M: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    pub passed: bool,
}

impl TestResult {
    fn new(name: &str, statistic: f64, p_value: f64, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        TestResult {
            name: name.to_owned(),
            statistic,
            p_value,
            passed: p_value >= alpha,
        }
    }
}

fn require(test: &'static str, bits: &BitStream, needed: usize) -> Result<()> {
    if bits.len() < needed {
        return Err(Error::TooShort {
            test,
            needed,
            got: bits.len(),
        });
    }
    Ok(())
}

fn partial_sum(bits: &BitStream) -> i64 {
    2 * bits.count_ones() as i64 - bits.len() as i64
}

pub fn monobit(bits: &BitStream, alpha: f64) -> Result<TestResult> {
    require("monobit", bits, 100)?;
    Ok(monobit_ungated(bits, alpha))
}

fn monobit_ungated(bits: &BitStream, alpha: f64) -> TestResult {
    let s = partial_sum(bits).unsigned_abs() as f64 / (bits.len() as f64).sqrt();
    TestResult::new("monobit", s, erfc(s / std::f64::consts::SQRT_2), alpha)
}

pub fn block_frequency(bits: &BitStream, m: usize, alpha: f64) -> Result<TestResult> {
    require("block_frequency", bits, 100.max(m))?;
    block_frequency_ungated(bits, m, alpha)
}

fn block_frequency_ungated(bits: &BitStream, m: usize, alpha: f64) -> Result<TestResult> {
    let blocks = bits.len() / m;
    let chi2 = 4.0
        * m as f64
        * (0..blocks)
            .map(|b| {
                let pi = bits.slice(b * m, (b + 1) * m).count_ones() as f64 / m as f64;
                (pi - 0.5).powi(2)
            })
            .sum::<f64>();
    Ok(TestResult::new(
        "block_frequency",
        chi2,
        gamma_q(blocks as f64 / 2.0, chi2 / 2.0),
        alpha,
    ))
}

pub fn runs(bits: &BitStream, alpha: f64) -> Result<TestResult> {
    require("runs", bits, 100)?;
    runs_ungated(bits, alpha)
}

fn runs_ungated(bits: &BitStream, alpha: f64) -> Result<TestResult> {
    let n = bits.len() as f64;
    let ones = bits.count_ones();
    let pi = ones as f64 / n;
    // frequency prerequisite
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return Ok(TestResult::new("runs", f64::NAN, 0.0, alpha));
    }
    let v = 1 + (1..bits.len()).filter(|&i| bits.get(i) != bits.get(i - 1)).count();
    let v = v as f64;
    // symmetric in ones/zeros so the result is complement-invariant
    let q = (ones as f64 * (bits.len() - ones) as f64) / (n * n);
    let p = erfc((v - 2.0 * n * q).abs() / (2.0 * (2.0 * n).sqrt() * q));
    Ok(TestResult::new("runs", v, p, alpha))
}

pub fn longest_run(bits: &BitStream, alpha: f64) -> Result<TestResult> {
    require("longest_run", bits, 128)?;
    longest_run_ungated(bits, alpha)
}

fn longest_run_ungated(bits: &BitStream, alpha: f64) -> Result<TestResult> {
    let n = bits.len();
    let (m, lo, probs): (usize, usize, &[f64]) = if n < 6272 {
        (8, 1, &[0.2148, 0.3672, 0.2305, 0.2266])
    } else if n < 750_000 {
        (128, 4, &[0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124])
    } else {
        (10_000, 10, &[0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727])
    };
    let k = probs.len() - 1;
    let blocks = n / m;
    let mut counts = vec![0f64; probs.len()];
    for b in 0..blocks {
        let (mut run, mut best) = (0usize, 0usize);
        for i in b * m..(b + 1) * m {
            if bits.get(i) {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        counts[best.clamp(lo, lo + k) - lo] += 1.0;
    }
    let nb = blocks as f64;
    let chi2: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&v, &p)| (v - nb * p).powi(2) / (nb * p))
        .sum();
    Ok(TestResult::new(
        "longest_run",
        chi2,
        gamma_q(k as f64 / 2.0, chi2 / 2.0),
        alpha,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CusumMode {
    Forward,
    Backward,
}

pub fn cumulative_sums(bits: &BitStream, mode: CusumMode, alpha: f64) -> Result<TestResult> {
    require("cumulative_sums", bits, 100)?;
    cumulative_sums_ungated(bits, mode, alpha)
}

fn cumulative_sums_ungated(bits: &BitStream, mode: CusumMode, alpha: f64) -> Result<TestResult> {
    let n = bits.len();
    let step = |i: usize| if bits.get(i) { 1i64 } else { -1 };
    let (mut s, mut z) = (0i64, 0i64);
    for k in 0..n {
        s += match mode {
            CusumMode::Forward => step(k),
            CusumMode::Backward => step(n - 1 - k),
        };
        z = z.max(s.abs());
    }
    let name = match mode {
        CusumMode::Forward => "cusum_forward",
        CusumMode::Backward => "cusum_backward",
    };
    let (nf, zf) = (n as f64, z as f64);
    let sq = nf.sqrt();
    // summation limits truncate toward zero
    let k_range = |lo: f64, hi: f64| (lo / 4.0).trunc() as i64..=(hi / 4.0).trunc() as i64;
    let mut sum1 = 0.0;
    for k in k_range(-nf / zf + 1.0, nf / zf - 1.0) {
        let k = k as f64;
        sum1 += normal_cdf((4.0 * k + 1.0) * zf / sq) - normal_cdf((4.0 * k - 1.0) * zf / sq);
    }
    let mut sum2 = 0.0;
    for k in k_range(-nf / zf - 3.0, nf / zf - 1.0) {
        let k = k as f64;
        sum2 += normal_cdf((4.0 * k + 3.0) * zf / sq) - normal_cdf((4.0 * k + 1.0) * zf / sq);
    }
    Ok(TestResult::new(name, zf, 1.0 - sum1 + sum2, alpha))
}

/// Counts of every overlapping m-bit pattern, wrapping around the end.
fn circular_counts(bits: &BitStream, m: usize) -> Vec<u64> {
    let n = bits.len();
    let mut counts = vec![0u64; 1 << m];
    if m == 0 {
        counts[0] = n as u64;
        return counts;
    }
    let mask = (1usize << m) - 1;
    let mut w = 0usize;
    for i in 0..m - 1 {
        w = (w << 1) | bits.get(i) as usize;
    }
    for i in 0..n {
        w = ((w << 1) | bits.get((i + m - 1) % n) as usize) & mask;
        counts[w] += 1;
    }
    counts
}

pub fn approximate_entropy(bits: &BitStream, m: usize, alpha: f64) -> Result<TestResult> {
    require("approximate_entropy", bits, 1 << (m + 5))?;
    approximate_entropy_ungated(bits, m, alpha)
}

fn approximate_entropy_ungated(bits: &BitStream, m: usize, alpha: f64) -> Result<TestResult> {
    let n = bits.len() as f64;
    let phi = |mm: usize| -> f64 {
        circular_counts(bits, mm)
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum()
    };
    let apen = phi(m) - phi(m + 1);
    let chi2 = 2.0 * n * (std::f64::consts::LN_2 - apen);
    Ok(TestResult::new(
        "approximate_entropy",
        chi2,
        gamma_q(2f64.powi(m as i32 - 1), chi2 / 2.0),
        alpha,
    ))
}

pub fn serial(bits: &BitStream, m: usize, alpha: f64) -> Result<(TestResult, TestResult)> {
    if m < 3 {
        return Err(Error::invalid("m", "serial test needs m >= 3"));
    }
    require("serial", bits, 1 << (m + 4))?;
    Ok(serial_ungated(bits, m, alpha))
}

fn serial_ungated(bits: &BitStream, m: usize, alpha: f64) -> (TestResult, TestResult) {
    let n = bits.len() as f64;
    let psi = |mm: usize| -> f64 {
        if mm == 0 {
            return 0.0;
        }
        let sq: f64 = circular_counts(bits, mm).iter().map(|&c| (c as f64).powi(2)).sum();
        2f64.powi(mm as i32) / n * sq - n
    };
    let (p0, p1, p2) = (psi(m), psi(m - 1), psi(m - 2));
    let d1 = p0 - p1;
    let d2 = p0 - 2.0 * p1 + p2;
    (
        TestResult::new("serial_1", d1, gamma_q(2f64.powi(m as i32 - 2), d1 / 2.0), alpha),
        TestResult::new("serial_2", d2, gamma_q(2f64.powi(m as i32 - 3), d2 / 2.0), alpha),
    )
}

pub fn dft_spectral(bits: &BitStream, alpha: f64) -> Result<TestResult> {
    require("dft_spectral", bits, 1000)?;
    dft_spectral_ungated(bits, alpha)
}

fn dft_spectral_ungated(bits: &BitStream, alpha: f64) -> Result<TestResult> {
    let n = bits.len();
    let mut buf: Vec<Complex64> = bits
        .iter()
        .map(|b| Complex64::new(if b { 1.0 } else { -1.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let nf = n as f64;
    let t = ((1.0f64 / 0.05).ln() * nf).sqrt();
    let n0 = 0.95 * nf / 2.0;
    let n1 = buf[..n / 2].iter().filter(|c| c.norm() < t).count() as f64;
    let d = (n1 - n0) / (nf * 0.95 * 0.05 / 4.0).sqrt();
    Ok(TestResult::new(
        "dft_spectral",
        d,
        erfc(d.abs() / std::f64::consts::SQRT_2),
        alpha,
    ))
}

/// Names of every p-value the suite produces, in report order.
pub const TEST_NAMES: [&str; 10] = [
    "monobit",
    "block_frequency",
    "runs",
    "longest_run",
    "cusum_forward",
    "cusum_backward",
    "approximate_entropy",
    "serial_1",
    "serial_2",
    "dft_spectral",
];

/// Which tests to run; all on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestToggles {
    pub monobit: bool,
    pub block_frequency: bool,
    pub runs: bool,
    pub longest_run: bool,
    pub cumulative_sums: bool,
    pub approximate_entropy: bool,
    pub serial: bool,
    pub dft_spectral: bool,
}

impl Default for TestToggles {
    fn default() -> Self {
        TestToggles {
            monobit: true,
            block_frequency: true,
            runs: true,
            longest_run: true,
            cumulative_sums: true,
            approximate_entropy: true,
            serial: true,
            dft_spectral: true,
        }
    }
}

/// A test that could not run on one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SequenceResults {
    pub bits: usize,
    pub results: Vec<TestResult>,
    pub skipped: Vec<Skipped>,
}

impl SequenceResults {
    pub fn get(&self, name: &str) -> Option<&TestResult> {
        self.results.iter().find(|r| r.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.skipped.is_empty() && self.results.iter().all(|r| r.passed)
    }
}

pub fn run_sequence(bits: &BitStream, toggles: &TestToggles, alpha: f64) -> SequenceResults {
    let mut out = SequenceResults {
        bits: bits.len(),
        ..Default::default()
    };
    let mut record = |names: &[&str], r: Result<Vec<TestResult>>| match r {
        Ok(v) => out.results.extend(v),
        Err(e) => out.skipped.extend(names.iter().map(|n| Skipped {
            name: n.to_string(),
            reason: e.to_string(),
        })),
    };
    if toggles.monobit {
        record(&["monobit"], monobit(bits, alpha).map(|r| vec![r]));
    }
    if toggles.block_frequency {
        record(
            &["block_frequency"],
            block_frequency(bits, BLOCK_FREQUENCY_M, alpha).map(|r| vec![r]),
        );
    }
    if toggles.runs {
        record(&["runs"], runs(bits, alpha).map(|r| vec![r]));
    }
    if toggles.longest_run {
        record(&["longest_run"], longest_run(bits, alpha).map(|r| vec![r]));
    }
    if toggles.cumulative_sums {
        record(
            &["cusum_forward", "cusum_backward"],
            cumulative_sums(bits, CusumMode::Forward, alpha).and_then(|f| {
                Ok(vec![f, cumulative_sums(bits, CusumMode::Backward, alpha)?])
            }),
        );
    }
    if toggles.approximate_entropy {
        record(
            &["approximate_entropy"],
            approximate_entropy(bits, APEN_M, alpha).map(|r| vec![r]),
        );
    }
    if toggles.serial {
        record(
            &["serial_1", "serial_2"],
            serial(bits, SERIAL_M, alpha).map(|(a, b)| vec![a, b]),
        );
    }
    if toggles.dft_spectral {
        record(&["dft_spectral"], dft_spectral(bits, alpha).map(|r| vec![r]));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub name: String,
    pub sequences: usize,
    pub passed: usize,
    pub pass_proportion: f64,
    /// Chi-square p-value of the p-value histogram (10 bins); needs >= 10
    /// sequences.
    pub uniformity_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub alpha: f64,
    /// Lower edge of the 3-sigma binomial band around 1 - alpha.
    pub min_pass_proportion: f64,
    pub sequences: Vec<SequenceResults>,
    pub summary: Vec<TestSummary>,
}

impl SuiteReport {
    pub fn summary_for(&self, name: &str) -> Option<&TestSummary> {
        self.summary.iter().find(|s| s.name == name)
    }

    pub fn all_passed(&self) -> bool {
        !self.sequences.is_empty() && self.sequences.iter().all(SequenceResults::all_passed)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "sequence,test,p_value,passed")?;
        for (i, s) in self.sequences.iter().enumerate() {
            for r in &s.results {
                writeln!(out, "{i},{},{},{}", r.name, r.p_value, r.passed as u8)?;
            }
        }
        Ok(())
    }
}

pub fn uniformity_p(p_values: &[f64]) -> Option<f64> {
    let s = p_values.len();
    if s < 10 {
        return None;
    }
    let mut bins = [0f64; 10];
    for &p in p_values {
        bins[((p * 10.0) as usize).min(9)] += 1.0;
    }
    let e = s as f64 / 10.0;
    let chi2: f64 = bins.iter().map(|&f| (f - e).powi(2) / e).sum();
    Some(gamma_q(4.5, chi2 / 2.0))
}

pub fn run_suite(sequences: &[BitStream], toggles: &TestToggles, alpha: f64) -> SuiteReport {
    let per_seq: Vec<SequenceResults> = sequences
        .par_iter()
        .map(|b| run_sequence(b, toggles, alpha))
        .collect();
    let summary = TEST_NAMES
        .iter()
        .filter_map(|&name| {
            let ps: Vec<&TestResult> = per_seq.iter().filter_map(|s| s.get(name)).collect();
            if ps.is_empty() {
                return None;
            }
            let passed = ps.iter().filter(|r| r.passed).count();
            let p_values: Vec<f64> = ps.iter().map(|r| r.p_value).collect();
            Some(TestSummary {
                name: name.to_owned(),
                sequences: ps.len(),
                passed,
                pass_proportion: passed as f64 / ps.len() as f64,
                uniformity_p: uniformity_p(&p_values),
            })
        })
        .collect();
    let q = 1.0 - alpha;
    let s = sequences.len().max(1) as f64;
    SuiteReport {
        alpha,
        min_pass_proportion: q - 3.0 * (q * alpha / s).sqrt(),
        sequences: per_seq,
        summary,
    }
}
