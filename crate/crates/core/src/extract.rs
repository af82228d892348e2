//! Randomness extraction: k-bit word grouping, the modular FIR whitening
//! filter y[i] = x[i] + 2x[i-1] + x[i-2] (mod 2^k), von Neumann debiasing
//! (used to bootstrap the hashing seed) and Toeplitz hashing over GF(2).
//!
//! Toeplitz convention: `T[i][j] = seed[i - j + n - 1]`. Row `i` of the
//! product is then the parity of `seed[i..i+n] & reverse(raw)`, which is
//! how [`toeplitz_extract`] evaluates it, 64 bits at a time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordStream {
    pub k: u32,
    pub words: Vec<u32>,
}

impl WordStream {
    pub fn new(k: u32, words: Vec<u32>) -> Result<Self> {
        if !(1..=32).contains(&k) {
            return Err(Error::invalid("k", "word width must be in 1..=32"));
        }
        if let Some(w) = words.iter().find(|&&w| u64::from(w) >= 1u64 << k) {
            return Err(Error::invalid("words", format!("{w} does not fit in {k} bits")));
        }
        Ok(WordStream { k, words })
    }

    fn mask(&self) -> u32 {
        if self.k == 32 {
            u32::MAX
        } else {
            (1u32 << self.k) - 1
        }
    }

    /// Concatenate the words back into bits, most significant bit first.
    pub fn to_bits(&self) -> BitStream {
        let mut out = BitStream::with_capacity(self.words.len() * self.k as usize);
        for &w in &self.words {
            for b in (0..self.k).rev() {
                out.push((w >> b) & 1 == 1);
            }
        }
        out
    }
}

/// Group consecutive k-bit blocks into words (first bit = MSB). Returns the
/// words and the number of trailing bits dropped.
pub fn group_words(bits: &BitStream, k: u32) -> Result<(WordStream, usize)> {
    if !(1..=32).contains(&k) {
        return Err(Error::invalid("k", "word width must be in 1..=32"));
    }
    let k_us = k as usize;
    let n_words = bits.len() / k_us;
    let words = (0..n_words)
        .map(|w| {
            (0..k_us).fold(0u32, |acc, b| (acc << 1) | bits.get(w * k_us + b) as u32)
        })
        .collect();
    Ok((WordStream { k, words }, bits.len() - n_words * k_us))
}

pub fn fir_whiten(x: &WordStream) -> WordStream {
    let mask = x.mask();
    let (mut x1, mut x2) = (0u32, 0u32);
    let words = x
        .words
        .iter()
        .map(|&xi| {
            let y = xi.wrapping_add(x1.wrapping_mul(2)).wrapping_add(x2) & mask;
            x2 = x1;
            x1 = xi;
            y
        })
        .collect();
    WordStream { k: x.k, words }
}

/// Inverse of [`fir_whiten`].
pub fn fir_unwhiten(y: &WordStream) -> WordStream {
    let mask = y.mask();
    let (mut x1, mut x2) = (0u32, 0u32);
    let words = y
        .words
        .iter()
        .map(|&yi| {
            let x = yi.wrapping_sub(x1.wrapping_mul(2)).wrapping_sub(x2) & mask;
            x2 = x1;
            x1 = x;
            x
        })
        .collect();
    WordStream { k: y.k, words }
}

/// Non-overlapping pairs: 01 -> 0, 10 -> 1, 00 and 11 dropped.
pub fn von_neumann(bits: &BitStream) -> BitStream {
    let mut out = BitStream::with_capacity(bits.len() / 4);
    for p in 0..bits.len() / 2 {
        let (a, b) = (bits.get(2 * p), bits.get(2 * p + 1));
        if a != b {
            out.push(a);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzSpec {
    m: usize,
    n: usize,
    seed: BitStream,
}

impl ToeplitzSpec {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> &BitStream {
        &self.seed
    }

    pub fn entry(&self, i: usize, j: usize) -> bool {
        assert!(i < self.m && j < self.n);
        self.seed.get(i + self.n - 1 - j)
    }
}

pub fn build_toeplitz(m: usize, n: usize, seed: BitStream) -> Result<ToeplitzSpec> {
    if m == 0 || n < m {
        return Err(Error::invalid("m", format!("need 1 <= m <= n, got m={m}, n={n}")));
    }
    if seed.len() != m + n - 1 {
        return Err(Error::SeedLength {
            expected: m + n - 1,
            got: seed.len(),
        });
    }
    Ok(ToeplitzSpec { m, n, seed })
}

pub fn toeplitz_extract(spec: &ToeplitzSpec, raw: &BitStream) -> Result<BitStream> {
    if raw.len() != spec.n {
        return Err(Error::LengthMismatch {
            expected: spec.n,
            got: raw.len(),
        });
    }
    let r = raw.reversed();
    let rw = r.words();
    Ok((0..spec.m)
        .map(|i| {
            let acc = rw
                .iter()
                .enumerate()
                .fold(0u64, |acc, (w, &x)| acc ^ (spec.seed.window64(i + 64 * w) & x));
            acc.count_ones() & 1 == 1
        })
        .collect())
}

/// m = floor(n / Γ̃), at least 1.
pub fn output_length(n: usize, gamma_tilde: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    if !(gamma_tilde >= 1.0) || !gamma_tilde.is_finite() {
        return Err(Error::ExpandingReduction(gamma_tilde));
    }
    Ok(((n as f64 / gamma_tilde).floor() as usize).clamp(1, n))
}

/// First `needed` von Neumann output bits of `raw`. On failure the error
/// carries how many seed bits are still missing.
pub fn bootstrap_seed(raw: &BitStream, needed: usize) -> Result<BitStream> {
    let vn = von_neumann(raw);
    if vn.len() < needed {
        return Err(Error::SeedShortfall {
            shortfall: needed - vn.len(),
        });
    }
    Ok(vn.slice(0, needed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub block_n: usize,
    pub word_k: u32,
    pub fir: bool,
    pub parallel: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            block_n: 4096,
            word_k: 8,
            fir: true,
            parallel: true,
        }
    }
}

/// Where every input bit went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub raw_bits: usize,
    pub seed_raw_bits: usize,
    pub seed_bits: usize,
    pub word_remainder: usize,
    pub block_remainder: usize,
    pub blocks: usize,
    pub block_n: usize,
    pub block_m: usize,
    pub output_bits: usize,
    pub gamma_tilde: f64,
    pub fir: bool,
    /// Seed bits still missing when the run was too short to bootstrap one.
    pub seed_shortfall: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub bits: BitStream,
    pub seed: BitStream,
    pub report: ExtractReport,
}

impl Extracted {
    /// Empty result for a run too short to bootstrap the seed.
    pub fn seed_shortfall(raw_bits: usize, gamma_tilde: f64, cfg: &ExtractConfig, shortfall: usize) -> Self {
        Extracted {
            bits: BitStream::new(),
            seed: BitStream::new(),
            report: ExtractReport {
                raw_bits,
                seed_raw_bits: raw_bits,
                seed_bits: 0,
                word_remainder: 0,
                block_remainder: 0,
                blocks: 0,
                block_n: cfg.block_n,
                block_m: output_length(cfg.block_n.max(1), gamma_tilde).unwrap_or(0),
                output_bits: 0,
                gamma_tilde,
                fir: cfg.fir,
                seed_shortfall: Some(shortfall),
            },
        }
    }
}

/// Words -> FIR -> bits -> blocks of `block_n` -> Toeplitz with the given seed.
pub fn extract_with_seed(data: &BitStream, gamma_tilde: f64, seed: &BitStream, cfg: &ExtractConfig) -> Result<Extracted> {
    if cfg.block_n < 2 {
        return Err(Error::invalid("block_n", "must be >= 2"));
    }
    let m = output_length(cfg.block_n, gamma_tilde)?;
    let spec = build_toeplitz(m, cfg.block_n, seed.clone())?;
    let (words, word_remainder) = group_words(data, cfg.word_k)?;
    let filtered = if cfg.fir { fir_whiten(&words) } else { words }.to_bits();
    let blocks = filtered.len() / cfg.block_n;
    let run = |b: usize| toeplitz_extract(&spec, &filtered.slice(b * cfg.block_n, (b + 1) * cfg.block_n));
    let parts: Vec<BitStream> = if cfg.parallel {
        (0..blocks).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        (0..blocks).map(run).collect::<Result<_>>()?
    };
    let mut bits = BitStream::with_capacity(blocks * m);
    for p in &parts {
        bits.extend_from(p);
    }
    let report = ExtractReport {
        raw_bits: data.len(),
        seed_raw_bits: 0,
        seed_bits: seed.len(),
        word_remainder,
        block_remainder: filtered.len() - blocks * cfg.block_n,
        blocks,
        block_n: cfg.block_n,
        block_m: m,
        output_bits: bits.len(),
        gamma_tilde,
        fir: cfg.fir,
        seed_shortfall: None,
    };
    Ok(Extracted {
        bits,
        seed: seed.clone(),
        report,
    })
}

/// Full chain on one run of raw bits. The seed is bootstrapped with von
/// Neumann from a buffered head of `raw`, grown by the observed yield until
/// it suffices; the rest of `raw` is hashed.
pub fn extract_pipeline(raw: &BitStream, gamma_tilde: f64, cfg: &ExtractConfig) -> Result<Extracted> {
    let m = output_length(cfg.block_n.max(1), gamma_tilde)?;
    let needed = m + cfg.block_n - 1;
    // an unbiased source yields one bit per four raw bits
    let mut take = (4 * needed + 256).min(raw.len());
    let seed = loop {
        match bootstrap_seed(&raw.slice(0, take), needed) {
            Ok(seed) => break seed,
            Err(Error::SeedShortfall { shortfall }) if take == raw.len() => {
                return Err(Error::SeedShortfall { shortfall })
            }
            Err(Error::SeedShortfall { shortfall }) => {
                let got = (needed - shortfall).max(1);
                let more = (1.1 * shortfall as f64 * take as f64 / got as f64).ceil() as usize;
                take = (take + more + 256).min(raw.len());
            }
            Err(e) => return Err(e),
        }
    };
    let mut out = extract_with_seed(&raw.slice(take, raw.len()), gamma_tilde, &seed, cfg)?;
    out.report.raw_bits = raw.len();
    out.report.seed_raw_bits = take;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bits(s: &str) -> BitStream {
        s.parse().unwrap()
    }

    fn bernoulli(n: usize, p: f64, seed: u64) -> BitStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_bool(p)).collect()
    }

    /// Direct O(mn) product from the index formula.
    fn naive_extract(m: usize, n: usize, seed: &BitStream, raw: &BitStream) -> BitStream {
        (0..m)
            .map(|i| (0..n).fold(false, |acc, j| acc ^ (seed.get(i + n - 1 - j) & raw.get(j))))
            .collect()
    }

    #[test]
    fn group_examples() {
        let (w, r) = group_words(&bits("00000011"), 8).unwrap();
        assert_eq!((w.words, r), (vec![3], 0));
        let (w, _) = group_words(&bits("1000"), 4).unwrap();
        assert_eq!(w.words, vec![8]);
        let (w, r) = group_words(&bits("1111111101"), 8).unwrap();
        assert_eq!((w.words, r), (vec![255], 2));
        assert_eq!(w_bits(&bits("1011001110001111")), bits("1011001110001111"));
    }

    fn w_bits(b: &BitStream) -> BitStream {
        group_words(b, 8).unwrap().0.to_bits()
    }

    #[test]
    fn fir_examples() {
        let ws = |v: Vec<u32>| WordStream::new(8, v).unwrap();
        assert_eq!(fir_whiten(&ws(vec![0; 5])).words, vec![0; 5]);
        assert_eq!(fir_whiten(&ws(vec![3, 0, 0])).words, vec![3, 6, 3]);
        assert_eq!(fir_whiten(&ws(vec![1, 2, 3])).words, vec![1, 4, 8]);
        assert_eq!(fir_whiten(&ws(vec![255, 255, 255])).words, vec![255, 253, 252]);
        assert_eq!(fir_unwhiten(&ws(vec![3, 6, 3])).words, vec![3, 0, 0]);
        assert_eq!(fir_unwhiten(&ws(vec![0; 3])).words, vec![0; 3]);
    }

    #[test]
    fn fir_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = WordStream::new(8, (0..10_000).map(|_| rng.random_range(0..256)).collect()).unwrap();
        assert_eq!(fir_unwhiten(&fir_whiten(&x)), x);
    }

    #[test]
    fn von_neumann_examples() {
        assert_eq!(von_neumann(&bits("0110")), bits("01"));
        assert!(von_neumann(&bits("0000")).is_empty());
        assert_eq!(von_neumann(&bits("011001")), bits("010"));
        assert_eq!(von_neumann(&bits("10111")), bits("1"));
    }

    #[test]
    fn von_neumann_unbiases_bernoulli() {
        let n = 1_000_000;
        let out = von_neumann(&bernoulli(n, 0.3, 4));
        let l = out.len() as f64;
        let pairs = (n / 2) as f64;
        let q = 2.0 * 0.3 * 0.7;
        let sd = (pairs * q * (1.0 - q)).sqrt();
        assert!((l - pairs * q).abs() < 3.0 * sd, "L = {l}");
        let f = out.count_ones() as f64 / l;
        assert!((f - 0.5).abs() < 3.0 * 0.5 / l.sqrt(), "freq {f}");
    }

    #[test]
    fn toeplitz_examples() {
        let t = build_toeplitz(1, 1, bits("1")).unwrap();
        assert!(t.entry(0, 0));
        let t = build_toeplitz(2, 3, bits("1011")).unwrap();
        let rows: Vec<Vec<bool>> = (0..2).map(|i| (0..3).map(|j| t.entry(i, j)).collect()).collect();
        assert_eq!(rows, vec![vec![true, false, true], vec![true, true, false]]);
        assert_eq!(toeplitz_extract(&t, &bits("111")).unwrap(), bits("00"));
        assert_eq!(toeplitz_extract(&t, &bits("100")).unwrap(), bits("11"));

        let z = build_toeplitz(5, 9, BitStream::zeros(13)).unwrap();
        assert_eq!(toeplitz_extract(&z, &bits("110101111")).unwrap(), BitStream::zeros(5));
    }

    #[test]
    fn toeplitz_errors() {
        assert!(matches!(
            build_toeplitz(2, 3, bits("101")),
            Err(Error::SeedLength { expected: 4, got: 3 })
        ));
        assert!(build_toeplitz(4, 3, BitStream::zeros(6)).is_err());
        assert!(build_toeplitz(0, 3, BitStream::zeros(2)).is_err());
        let t = build_toeplitz(2, 3, bits("1011")).unwrap();
        assert!(matches!(
            toeplitz_extract(&t, &bits("11")),
            Err(Error::LengthMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn packed_product_matches_naive() {
        for (m, n, s) in [(1, 1, 0), (3, 7, 1), (63, 64, 2), (64, 65, 3), (100, 300, 4), (700, 1000, 5)] {
            let seed = bernoulli(m + n - 1, 0.5, s);
            let raw = bernoulli(n, 0.5, s + 100);
            let t = build_toeplitz(m, n, seed.clone()).unwrap();
            assert_eq!(toeplitz_extract(&t, &raw).unwrap(), naive_extract(m, n, &seed, &raw), "m={m} n={n}");
        }
    }

    #[test]
    fn toeplitz_linearity() {
        let (m, n) = (40, 128);
        let t = build_toeplitz(m, n, bernoulli(m + n - 1, 0.5, 7)).unwrap();
        for k in 0..1000 {
            let a = bernoulli(n, 0.5, 2 * k + 1000);
            let b = bernoulli(n, 0.5, 2 * k + 1001);
            let lhs = toeplitz_extract(&t, &a.xor(&b).unwrap()).unwrap();
            let rhs = toeplitz_extract(&t, &a)
                .unwrap()
                .xor(&toeplitz_extract(&t, &b).unwrap())
                .unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn output_length_examples() {
        assert_eq!(output_length(4096, 2.0).unwrap(), 2048);
        assert_eq!(output_length(4096, 1.0).unwrap(), 4096);
        assert_eq!(output_length(1000, 3.0).unwrap(), 333);
        assert_eq!(output_length(10, 1e9).unwrap(), 1);
        assert!(matches!(output_length(10, 0.5), Err(Error::ExpandingReduction(_))));
        assert!(output_length(10, f64::NAN).is_err());
    }

    #[test]
    fn bootstrap_examples() {
        let needed = 2 + 5 - 1;
        let raw: BitStream = "01".repeat(2 * needed).parse().unwrap();
        assert_eq!(bootstrap_seed(&raw, needed).unwrap(), BitStream::zeros(needed));
        assert!(matches!(
            bootstrap_seed(&BitStream::zeros(1000), needed),
            Err(Error::SeedShortfall { shortfall }) if shortfall == needed
        ));
    }

    #[test]
    fn bootstrap_success_rate() {
        use statrs::distribution::{Binomial, DiscreteCDF};
        // 8*needed raw bits = 4*needed pairs, each kept with probability 1/2
        let needed = 20;
        let p_fail = Binomial::new(0.5, 4 * needed as u64).unwrap().cdf(needed as u64 - 1);
        assert!(1.0 - p_fail > 0.999, "oracle {p_fail}");
        let ok = (0..2000)
            .filter(|&s| bootstrap_seed(&bernoulli(8 * needed, 0.5, s), needed).is_ok())
            .count();
        assert!(ok >= 1990, "{ok}/2000");
    }

    #[test]
    fn pipeline_bookkeeping_identity() {
        let cfg = ExtractConfig {
            block_n: 64,
            ..Default::default()
        };
        let data = bernoulli(64 * 10 + 8 * 3 + 5, 0.5, 11);
        let out = extract_with_seed(&data, 1.0, &bernoulli(127, 0.5, 12), &cfg).unwrap();
        let r = &out.report;
        assert_eq!((r.word_remainder, r.block_remainder, r.blocks), (5, 24, 10));
        assert_eq!(r.output_bits, data.len() - r.word_remainder - r.block_remainder);
    }

    #[test]
    fn pipeline_block_counts() {
        let cfg = ExtractConfig::default();
        let data = bernoulli(10 * 4096, 0.5, 13);
        let seed = bernoulli(2048 + 4095, 0.5, 14);
        let out = extract_with_seed(&data, 2.0, &seed, &cfg).unwrap();
        assert_eq!(out.bits.len(), 10 * 2048);
    }

    #[test]
    fn pipeline_deterministic_and_parallel_agnostic() {
        let raw = bernoulli(200_000, 0.55, 15);
        let par = ExtractConfig::default();
        let seq = ExtractConfig {
            parallel: false,
            ..par
        };
        let a = extract_pipeline(&raw, 1.7, &par).unwrap();
        let b = extract_pipeline(&raw, 1.7, &par).unwrap();
        let c = extract_pipeline(&raw, 1.7, &seq).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let r = &a.report;
        assert_eq!(
            r.raw_bits,
            r.seed_raw_bits + r.word_remainder + r.block_remainder + r.blocks * r.block_n
        );
        assert_eq!(r.output_bits, r.blocks * r.block_m);
    }

    #[test]
    fn pipeline_unbiases_biased_source() {
        use statrs::function::erf::erfc;
        let raw = bernoulli(400_000, 0.6, 16);
        let h = -(0.6f64).log2();
        let out = extract_pipeline(&raw, 1.0 / h, &ExtractConfig::default()).unwrap();
        let n = out.bits.len() as f64;
        let s = 2.0 * out.bits.count_ones() as f64 - n;
        let p = erfc(s.abs() / (2.0 * n).sqrt());
        assert!(p >= 0.01, "monobit p = {p}, n = {n}");
    }

    #[test]
    fn pipeline_seed_shortfall() {
        let raw = BitStream::zeros(100_000);
        assert!(matches!(
            extract_pipeline(&raw, 1.0, &ExtractConfig::default()),
            Err(Error::SeedShortfall { .. })
        ));
    }

    proptest! {
        #[test]
        fn toeplitz_diagonals_constant(seed in proptest::collection::vec(any::<bool>(), 1..80), m_frac in 0.0f64..1.0) {
            // m + n - 1 = len, 1 <= m <= n
            let len = seed.len();
            let max_m = len.div_ceil(2);
            let m = 1 + ((max_m - 1) as f64 * m_frac) as usize;
            let n = len + 1 - m;
            let t = build_toeplitz(m, n, seed.into_iter().collect()).unwrap();
            for i in 0..m - 1 {
                for j in 0..n - 1 {
                    prop_assert_eq!(t.entry(i, j), t.entry(i + 1, j + 1));
                }
            }
        }

        #[test]
        fn von_neumann_pair_swap_complements(v in proptest::collection::vec(any::<bool>(), 0..300)) {
            let b: BitStream = v.iter().copied().collect();
            let mut swapped = b.clone();
            for p in 0..b.len() / 2 {
                swapped.set(2 * p, b.get(2 * p + 1));
                swapped.set(2 * p + 1, b.get(2 * p));
            }
            prop_assert_eq!(von_neumann(&swapped), von_neumann(&b).complement());
        }

        #[test]
        fn fir_round_trip(k in 1u32..=32, raw in proptest::collection::vec(any::<u32>(), 0..200)) {
            let mask = if k == 32 { u32::MAX } else { (1 << k) - 1 };
            let x = WordStream::new(k, raw.into_iter().map(|w| w & mask).collect()).unwrap();
            prop_assert_eq!(fir_unwhiten(&fir_whiten(&x)), x);
        }

        #[test]
        fn packed_matches_naive_random(m in 1usize..90, extra in 0usize..150, s in any::<u64>()) {
            let n = m + extra;
            let seed = bernoulli(m + n - 1, 0.5, s);
            let raw = bernoulli(n, 0.5, s ^ 0xabc);
            let t = build_toeplitz(m, n, seed.clone()).unwrap();
            prop_assert_eq!(toeplitz_extract(&t, &raw).unwrap(), naive_extract(m, n, &seed, &raw));
        }
    }
}
