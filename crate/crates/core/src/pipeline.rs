//! End-to-end orchestration: simulate -> detect -> digitize -> entropy ->
//! extract -> test, plus the S_x histogram and reduction-factor sweeps.
//!
//! The simulation is streamed frame by frame, so no full trace is held in
//! memory. Every artifact is a pure function of the config (seeds included);
//! `manifest.json` records the config hash and a SHA-256 per artifact.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::{write_bit_file, BitStream};
use crate::detector::{add_noise, calibrate_sigma_abs, design_lowpass, DetectorParams, GaussianNoise, StreamingFilter};
use crate::digitizer::{
    bit_agreement, frame_energies, midpoint_threshold, window_energy, ComparatorSpec, Digitized, FrameRecord,
    FrameSpec,
};
use crate::entropy::{histogram, reduction_factor, window_probability, EntropyReport, Histogram, DEFAULT_WINDOW_C};
use crate::error::{Error, Result};
use crate::extract::{extract_pipeline, ExtractConfig, ExtractReport, Extracted};
use crate::laser::{simulate_frames, PolarizedTrace, PumpWaveform, SfmState, SimGrid, VcselParams};
use crate::stats::{run_suite, SuiteReport, TestToggles, DEFAULT_ALPHA};

/// Frame counts for desk-scale and full reproduction runs.
pub const DESK_FRAMES: usize = 100_000;
pub const FULL_FRAMES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DigitizeMode {
    /// Pulse-energy ratio S_x against `threshold`.
    Energy,
    /// Latch of the filtered, noisy differential signal px - py.
    Comparator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub laser: VcselParams,
    pub pump: PumpWaveform,
    pub grid: SimGrid,
    pub detector: DetectorParams,
    /// Derived from the pump when absent.
    pub frames: Option<FrameSpec>,
    /// Comparator on the differential signal px - py.
    pub comparator: ComparatorSpec,
    /// Replace `comparator.v_th` by the midpoint between the two clusters
    /// of latch samples.
    pub calibrate_v_th: bool,
    pub digitize: DigitizeMode,
    /// S_x decision threshold for energy digitization.
    pub threshold: f64,
    pub window_c: f64,
    pub histogram_bins: usize,
    pub block_n: usize,
    pub k: u32,
    pub fir: bool,
    pub alpha: f64,
    pub tests: TestToggles,
    /// Split the extracted output into sequences of this many bits for the
    /// test suite; one sequence when absent.
    pub suite_sequence_bits: Option<usize>,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            laser: VcselParams::default(),
            pump: PumpWaveform::default(),
            grid: SimGrid {
                n_frames: DESK_FRAMES,
                ..SimGrid::default()
            },
            detector: DetectorParams::default(),
            frames: None,
            comparator: ComparatorSpec::default(),
            calibrate_v_th: false,
            digitize: DigitizeMode::Energy,
            threshold: 0.5,
            window_c: DEFAULT_WINDOW_C,
            histogram_bins: 50,
            block_n: 4096,
            k: 8,
            fir: true,
            alpha: DEFAULT_ALPHA,
            tests: TestToggles::default(),
            suite_sequence_bits: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Format {
            what: "config",
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn frame_spec(&self) -> FrameSpec {
        self.frames.unwrap_or_else(|| FrameSpec::for_pump(&self.pump))
    }

    /// Same config at another repetition rate, frames rescaled with it.
    pub fn with_rate(&self, rep_rate: f64) -> Self {
        let mut cfg = self.clone();
        cfg.pump.rep_rate = rep_rate;
        cfg.frames = self.frames.map(|f| f.rescaled(1.0 / rep_rate));
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.laser.validate()?;
        self.pump.validate()?;
        self.grid.validate(&self.pump)?;
        self.detector.validate()?;
        let frames = self.frame_spec();
        frames.validate()?;
        if (frames.period - self.pump.period()).abs() > 1e-9 * self.pump.period() {
            return Err(Error::invalid("frames.period", "must equal 1 / pump.rep_rate"));
        }
        if !self.comparator.v_th.is_finite() {
            return Err(Error::invalid("comparator.v_th", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold", "must lie in [0, 1]"));
        }
        if !(self.window_c > 0.0 && self.window_c.is_finite()) {
            return Err(Error::invalid("window_c", "must be > 0"));
        }
        if self.histogram_bins < 2 {
            return Err(Error::invalid("histogram_bins", "must be >= 2"));
        }
        if self.block_n < 2 {
            return Err(Error::invalid("block_n", "must be >= 2"));
        }
        if !(1..=32).contains(&self.k) {
            return Err(Error::invalid("k", "must be in 1..=32"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// The config with `output_dir` reset to ".", so that where a run
    /// writes does not change what it records.
    pub fn canonical(&self) -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("."),
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().to_toml().as_bytes()))
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            block_n: self.block_n,
            word_k: self.k,
            fir: self.fir,
            parallel: true,
        }
    }
}

/// Comparator-path details of an acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorReport {
    pub latch_offset: f64,
    pub v_th: f64,
    pub v_th_calibrated: bool,
    pub sigma_abs: f64,
    /// Agreement with energy bits on frames with S_x outside [0.4, 0.6].
    pub agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitizeReport {
    pub mode: DigitizeMode,
    pub frames: usize,
    pub degenerate_frames: usize,
    pub raw_bits: usize,
    pub comparator: Option<ComparatorReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    /// Energy-domain records; always present, they carry S_x.
    pub energy: Digitized,
    /// Raw bits of the configured digitizer.
    pub raw: BitStream,
    pub report: DigitizeReport,
}

/// Energy-mode acquisition: one record per frame from the noise-free
/// polarization-resolved powers.
pub fn simulate_energies(cfg: &PipelineConfig) -> Result<Digitized> {
    cfg.validate()?;
    let frames = cfg.frame_spec();
    let dt = cfg.grid.dt;
    let mut out = Digitized::default();
    simulate_frames(&cfg.laser, &cfg.pump, &cfg.grid, SfmState::dark(cfg.pump.mu_off), |f, px, py| {
        out.push(frame_record(&frames, dt, f, px, py, cfg.threshold)?);
        Ok(())
    })?;
    Ok(out)
}

fn frame_record(frames: &FrameSpec, dt: f64, f: usize, px: &[f64], py: &[f64], threshold: f64) -> Result<FrameRecord> {
    let start = frames.frame_start(dt, f);
    let (a, b) = frames.window_samples(dt, f);
    let (a, b) = (a - start, (b - start).min(px.len()));
    if a >= b {
        return Err(Error::EmptyWindow { frame: f });
    }
    let (ex, ey) = window_energy(&px[a..b], &py[a..b], dt);
    FrameRecord::from_energies(ex, ey, threshold)
}

/// Simulate and digitize per the config.
pub fn acquire(cfg: &PipelineConfig) -> Result<Acquisition> {
    match cfg.digitize {
        DigitizeMode::Energy => {
            let energy = simulate_energies(cfg)?;
            let report = DigitizeReport {
                mode: DigitizeMode::Energy,
                frames: energy.records.len(),
                degenerate_frames: energy.degenerate,
                raw_bits: energy.bits.len(),
                comparator: None,
            };
            Ok(Acquisition {
                raw: energy.bits.clone(),
                energy,
                report,
            })
        }
        DigitizeMode::Comparator => acquire_comparator(cfg),
    }
}

/// Latch offset at the peak of the mean filtered pulse over the first
/// `pilot` frames of the run (the same frames the full run starts with).
pub fn calibrate_latch(cfg: &PipelineConfig, pilot: usize) -> Result<f64> {
    let grid = SimGrid {
        n_frames: pilot.clamp(1, cfg.grid.n_frames.max(1)),
        ..cfg.grid
    };
    let mut total = Vec::new();
    simulate_frames(&cfg.laser, &cfg.pump, &grid, SfmState::dark(cfg.pump.mu_off), |_, px, py| {
        total.extend(px.iter().zip(py).map(|(x, y)| x + y));
        Ok(())
    })?;
    latch_peak(cfg, &total, grid.n_frames)
}

/// Offset of the maximum of the filtered total power averaged over the
/// first `n_frames` frames of `total`.
fn latch_peak(cfg: &PipelineConfig, total: &[f64], n_frames: usize) -> Result<f64> {
    let frames = cfg.frame_spec();
    let dt = cfg.grid.dt;
    let kernel = design_lowpass(cfg.detector.bandwidth, dt, cfg.detector.n_taps)?;
    let filtered = crate::detector::apply_filter(total, dt, &kernel)?;
    let mut profile: Vec<f64> = Vec::new();
    for f in 0..n_frames {
        let (a, b) = (frames.frame_start(dt, f), frames.frame_start(dt, f + 1).min(filtered.len()));
        if profile.is_empty() {
            profile = vec![0.0; b - a];
        }
        for (acc, &v) in profile.iter_mut().zip(&filtered[a..b]) {
            *acc += v;
        }
    }
    let peak = profile
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0;
    Ok((peak as f64 * dt).min(frames.period * (1.0 - 1e-9)))
}

/// Frames used by the comparator path: the configured spec, or the pump
/// default with the latch moved to the calibrated pulse peak.
pub fn comparator_frames(cfg: &PipelineConfig) -> Result<FrameSpec> {
    match cfg.frames {
        Some(f) => Ok(f),
        None => Ok(FrameSpec {
            latch_offset: calibrate_latch(cfg, LATCH_PILOT)?,
            ..FrameSpec::for_pump(&cfg.pump)
        }),
    }
}

const LATCH_PILOT: usize = 256;

/// Streams the differential signal px - py through the detector filter,
/// draws one unit Gaussian per filtered sample and keeps the latch
/// samples. The noise is scaled once the mean pulse energy is known, which
/// gives exactly `add_noise(apply_filter(px - py), sigma_abs, seed)` at the
/// latch instants.
fn acquire_comparator(cfg: &PipelineConfig) -> Result<Acquisition> {
    cfg.validate()?;
    let frames = comparator_frames(cfg)?;
    let dt = cfg.grid.dt;
    let n_frames = cfg.grid.n_frames;
    let kernel = design_lowpass(cfg.detector.bandwidth, dt, cfg.detector.n_taps)?;
    let mut filter = StreamingFilter::new(&kernel);
    let mut noise = GaussianNoise::new(1.0, cfg.detector.noise_seed);
    let mut energy = Digitized::default();
    let mut latched: Vec<(f64, f64)> = Vec::with_capacity(n_frames);
    let mut out_idx = 0usize;
    let mut next_latch = frames.latch_sample(dt, 0);
    let mut take = |y: f64, latched: &mut Vec<(f64, f64)>| {
        let z = noise.unit();
        if latched.len() < n_frames && out_idx == next_latch {
            latched.push((y, z));
            next_latch = frames.latch_sample(dt, latched.len());
        }
        out_idx += 1;
    };
    simulate_frames(&cfg.laser, &cfg.pump, &cfg.grid, SfmState::dark(cfg.pump.mu_off), |f, px, py| {
        energy.push(frame_record(&frames, dt, f, px, py, cfg.threshold)?);
        for (&x, &y) in px.iter().zip(py) {
            if let Some(v) = filter.push(x - y) {
                take(v, &mut latched);
            }
        }
        Ok(())
    })?;
    for v in filter.finish() {
        take(v, &mut latched);
    }
    debug_assert_eq!(latched.len(), n_frames);
    Ok(finish_comparator(cfg, &frames, energy, &latched))
}

/// Scales the latched unit noise, thresholds and reports. `latched` holds
/// the filtered signal and the unit noise draw at each latch instant.
fn finish_comparator(cfg: &PipelineConfig, frames: &FrameSpec, energy: Digitized, latched: &[(f64, f64)]) -> Acquisition {
    let dt = cfg.grid.dt;
    let n_frames = latched.len();
    // S_x = (1 + D/E) / 2 for D = E_x - E_y, so the differential channel
    // needs twice the noise for the same S_x spread
    let mean_energy = energy.records.iter().map(|r| r.ex + r.ey).sum::<f64>() / n_frames.max(1) as f64;
    let (a, b) = frames.window_samples(dt, 0);
    let sigma_abs = 2.0 * calibrate_sigma_abs(cfg.detector.sigma, mean_energy, dt, b - a);
    let values: Vec<f64> = latched.iter().map(|&(y, z)| y + sigma_abs * z).collect();
    let v_th = match cfg.calibrate_v_th {
        true => midpoint_threshold(&values).unwrap_or(cfg.comparator.v_th),
        false => cfg.comparator.v_th,
    };
    let raw: BitStream = values.iter().map(|&v| v >= v_th).collect();
    let agreement = bit_agreement(&energy.records, &raw, 0.4, 0.6);
    let report = DigitizeReport {
        mode: DigitizeMode::Comparator,
        frames: energy.records.len(),
        degenerate_frames: energy.degenerate,
        raw_bits: raw.len(),
        comparator: Some(ComparatorReport {
            latch_offset: frames.latch_offset,
            v_th,
            v_th_calibrated: cfg.calibrate_v_th,
            sigma_abs,
            agreement,
        }),
    };
    Acquisition { energy, raw, report }
}

/// Digitizes a recorded trace per the config, over every complete frame it
/// holds. A trace simulated from the same config gives exactly what
/// [`acquire`] gives.
pub fn digitize_trace(cfg: &PipelineConfig, trace: &PolarizedTrace) -> Result<Acquisition> {
    cfg.validate()?;
    let dt = cfg.grid.dt;
    if (trace.dt - dt).abs() > 1e-9 * dt {
        return Err(Error::DtMismatch {
            trace: trace.dt,
            kernel: dt,
        });
    }
    let spec = cfg.frame_spec();
    let n_frames = spec.complete_frames(dt, trace.len());
    if n_frames == 0 {
        return Err(Error::TraceTooShort {
            samples: trace.len(),
            needed: spec.frame_start(dt, 1),
        });
    }
    let energy_of = |frames: &FrameSpec| -> Result<Digitized> {
        let e = frame_energies(&trace.px, &trace.py, dt, frames)?;
        Digitized::from_energies(&e[..n_frames], cfg.threshold)
    };
    match cfg.digitize {
        DigitizeMode::Energy => {
            let energy = energy_of(&spec)?;
            let report = DigitizeReport {
                mode: DigitizeMode::Energy,
                frames: energy.records.len(),
                degenerate_frames: energy.degenerate,
                raw_bits: energy.bits.len(),
                comparator: None,
            };
            Ok(Acquisition {
                raw: energy.bits.clone(),
                energy,
                report,
            })
        }
        DigitizeMode::Comparator => {
            let frames = match cfg.frames {
                Some(f) => f,
                None => {
                    let pilot = LATCH_PILOT.min(n_frames);
                    let end = spec.frame_start(dt, pilot).min(trace.len());
                    let total: Vec<f64> = trace.px[..end].iter().zip(&trace.py[..end]).map(|(x, y)| x + y).collect();
                    FrameSpec {
                        latch_offset: latch_peak(cfg, &total, pilot)?,
                        ..spec
                    }
                }
            };
            let kernel = design_lowpass(cfg.detector.bandwidth, dt, cfg.detector.n_taps)?;
            let diff: Vec<f64> = trace.px.iter().zip(&trace.py).map(|(x, y)| x - y).collect();
            let filtered = crate::detector::apply_filter(&diff, dt, &kernel)?;
            let unit = add_noise(&vec![0.0; filtered.len()], 1.0, cfg.detector.noise_seed)?;
            let latched: Vec<(f64, f64)> = (0..n_frames)
                .map(|f| {
                    let i = frames.latch_sample(dt, f).min(filtered.len() - 1);
                    (filtered[i], unit[i])
                })
                .collect();
            Ok(finish_comparator(cfg, &frames, energy_of(&frames)?, &latched))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl Manifest {
    pub fn new(config_sha256: String) -> Self {
        Manifest {
            config_sha256,
            artifacts: BTreeMap::new(),
        }
    }

    /// Hash `dir/name` and record it.
    pub fn add(&mut self, dir: &Path, name: &str) -> Result<()> {
        let bytes = fs::read(dir.join(name))?;
        self.artifacts.insert(
            name.to_owned(),
            ArtifactEntry {
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub digitize: DigitizeReport,
    pub entropy: EntropyReport,
    pub extract: ExtractReport,
    pub suite: SuiteReport,
    pub manifest: Manifest,
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage))
}

/// Artifact names written by each stage, in manifest order.
pub const DIGITIZE_FILES: [&str; 4] = ["frames.csv", "raw.bin", "raw.bin.json", "digitize.json"];
pub const ENTROPY_FILES: [&str; 2] = ["entropy.json", "histogram.csv"];
pub const EXTRACT_FILES: [&str; 5] = ["seed.bin", "seed.bin.json", "extracted.bin", "extracted.bin.json", "extract.json"];
pub const TEST_FILES: [&str; 2] = ["suite.json", "suite.csv"];

pub fn write_digitize_artifacts(dir: &Path, acq: &Acquisition) -> Result<()> {
    write_with(&dir.join("frames.csv"), |w| acq.energy.write_csv(w))?;
    write_bit_file(&dir.join("raw.bin"), &acq.raw)?;
    write_json(&dir.join("digitize.json"), &acq.report)
}

/// Entropy report and S_x histogram of an acquisition.
pub fn entropy_stage(cfg: &PipelineConfig, raw: &BitStream, sx: &[f64]) -> Result<(EntropyReport, Histogram)> {
    let report = EntropyReport::compute(raw, sx, cfg.detector.sigma, cfg.window_c)?;
    Ok((report, histogram(sx, cfg.histogram_bins)?))
}

pub fn write_entropy_artifacts(dir: &Path, report: &EntropyReport, hist: &Histogram) -> Result<()> {
    write_json(&dir.join("entropy.json"), report)?;
    write_with(&dir.join("histogram.csv"), |w| hist.write_csv(w))
}

/// Extraction per the config. A run too short to bootstrap the seed is not
/// an error: it yields an empty output and records the shortfall.
pub fn extract_stage(cfg: &PipelineConfig, raw: &BitStream, gamma_tilde: f64) -> Result<Extracted> {
    let xcfg = cfg.extract_config();
    match extract_pipeline(raw, gamma_tilde, &xcfg) {
        Err(Error::SeedShortfall { shortfall }) => Ok(Extracted::seed_shortfall(raw.len(), gamma_tilde, &xcfg, shortfall)),
        r => r,
    }
}

pub fn write_extract_artifacts(dir: &Path, extracted: &Extracted) -> Result<()> {
    write_bit_file(&dir.join("seed.bin"), &extracted.seed)?;
    write_bit_file(&dir.join("extracted.bin"), &extracted.bits)?;
    write_json(&dir.join("extract.json"), &extracted.report)
}

pub fn test_stage(cfg: &PipelineConfig, bits: &BitStream) -> SuiteReport {
    run_suite(&split_sequences(bits, cfg.suite_sequence_bits), &cfg.tests, cfg.alpha)
}

pub fn write_test_artifacts(dir: &Path, suite: &SuiteReport) -> Result<()> {
    write_json(&dir.join("suite.json"), suite)?;
    write_with(&dir.join("suite.csv"), |w| suite.write_csv(w))
}

/// Writes the canonical config as `config.toml`.
pub fn write_config(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    fs::write(dir.join("config.toml"), cfg.canonical().to_toml())?;
    Ok(())
}

/// Run every stage and write the artifact set into `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    staged("config", cfg.validate())?;
    let dir = cfg.output_dir.as_path();
    staged("write", fs::create_dir_all(dir).map_err(Error::from))?;
    let mut manifest = Manifest::new(cfg.hash());
    let mut record = |names: &[&str]| -> Result<()> {
        names.iter().try_for_each(|name| staged("write", manifest.add(dir, name)))
    };

    staged("write", write_config(dir, cfg))?;
    record(&["config.toml"])?;

    let acq = staged("simulate", acquire(cfg))?;
    staged("digitize", write_digitize_artifacts(dir, &acq))?;
    record(&DIGITIZE_FILES)?;

    let (entropy, hist) = staged("entropy", entropy_stage(cfg, &acq.raw, &acq.energy.sx))?;
    staged("entropy", write_entropy_artifacts(dir, &entropy, &hist))?;
    record(&ENTROPY_FILES)?;

    let extracted = staged("extract", extract_stage(cfg, &acq.raw, entropy.gamma_tilde))?;
    staged("extract", write_extract_artifacts(dir, &extracted))?;
    record(&EXTRACT_FILES)?;

    let suite = test_stage(cfg, &extracted.bits);
    staged("test", write_test_artifacts(dir, &suite))?;
    record(&TEST_FILES)?;

    staged("write", manifest.write(dir))?;
    Ok(PipelineOutcome {
        digitize: acq.report,
        entropy,
        extract: extracted.report,
        suite,
        manifest,
    })
}

/// Consecutive sequences of `len` bits (remainder dropped), or the whole
/// stream as one sequence.
pub fn split_sequences(bits: &BitStream, len: Option<usize>) -> Vec<BitStream> {
    match len {
        Some(l) if l > 0 && l < bits.len() => (0..bits.len() / l)
            .map(|i| bits.slice(i * l, (i + 1) * l))
            .collect(),
        _ => vec![bits.clone()],
    }
}

/// Energy-mode acquisitions at several repetition rates, run in parallel,
/// returned in input order.
pub fn simulate_rates(cfg: &PipelineConfig, rates: &[f64]) -> Result<Vec<(f64, Digitized)>> {
    rates
        .par_iter()
        .map(|&r| {
            let d = simulate_energies(&cfg.with_rate(r)).map_err(|e| e.in_stage("simulate"))?;
            Ok((r, d))
        })
        .collect()
}

/// Fraction of S_x values in the closed interval `[lo, hi]`.
pub fn central_mass(sx: &[f64], lo: f64, hi: f64) -> f64 {
    if sx.is_empty() {
        return 0.0;
    }
    sx.iter().filter(|&&v| lo <= v && v <= hi).count() as f64 / sx.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateHistogram {
    pub rep_rate: f64,
    pub histogram: Histogram,
    pub central_mass: f64,
    pub frames: usize,
    pub degenerate: usize,
}

pub fn rate_histograms(data: &[(f64, Digitized)], n_bins: usize) -> Result<Vec<RateHistogram>> {
    data.iter()
        .map(|(r, d)| {
            Ok(RateHistogram {
                rep_rate: *r,
                histogram: histogram(&d.sx, n_bins).map_err(|e| e.in_stage("entropy"))?,
                central_mass: central_mass(&d.sx, 0.25, 0.75),
                frames: d.records.len(),
                degenerate: d.degenerate,
            })
        })
        .collect()
}

pub fn fig2a_file_name(rate: f64) -> String {
    format!("fig2a_sx_{rate}GHz.csv")
}

/// One histogram CSV per rate plus `fig2a_central_mass.csv`. Returns the
/// paths written.
pub fn write_fig2a(dir: &Path, hists: &[RateHistogram]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for h in hists {
        let p = dir.join(fig2a_file_name(h.rep_rate));
        write_with(&p, |w| h.histogram.write_csv(w))?;
        paths.push(p);
    }
    let p = dir.join("fig2a_central_mass.csv");
    write_with(&p, |w| {
        writeln!(w, "rep_rate,central_mass,frames,degenerate")?;
        for h in hists {
            writeln!(w, "{},{},{},{}", h.rep_rate, h.central_mass, h.frames, h.degenerate)?;
        }
        Ok(())
    })?;
    paths.push(p);
    Ok(paths)
}

pub fn sweep_sx_histograms(cfg: &PipelineConfig, rates: &[f64], dir: &Path) -> Result<Vec<RateHistogram>> {
    let data = simulate_rates(cfg, rates)?;
    let hists = rate_histograms(&data, cfg.histogram_bins)?;
    write_fig2a(dir, &hists)?;
    Ok(hists)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub sigma: f64,
    pub rep_rate: f64,
    pub p_window: f64,
    pub h_min: f64,
    /// `None` when no entropy is extractable; see `status`.
    pub gamma_tilde: Option<f64>,
    pub status: String,
}

/// Γ̃(σ, rate) from one S_x dataset per rate; σ enters only through the
/// window probability.
pub fn reduction_table(data: &[(f64, Digitized)], sigmas: &[f64], c: f64) -> Result<Vec<ReductionRow>> {
    if sigmas.iter().any(|&s| !(s >= 0.0)) || sigmas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("sigmas", "must be >= 0 and ascending"));
    }
    let mut rows = Vec::with_capacity(data.len() * sigmas.len());
    for (rate, d) in data {
        let h_min = crate::entropy::min_entropy(&d.bits);
        for &sigma in sigmas {
            let p_window = window_probability(&d.sx, sigma, c);
            let (gamma_tilde, status) = match reduction_factor(h_min, p_window) {
                Ok(g) => (Some(g), "ok".to_owned()),
                Err(e) => (None, e.to_string()),
            };
            rows.push(ReductionRow {
                sigma,
                rep_rate: *rate,
                p_window,
                h_min,
                gamma_tilde,
                status,
            });
        }
    }
    Ok(rows)
}

pub fn write_reduction_csv(path: &Path, rows: &[ReductionRow]) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "sigma,rep_rate,p_window,h_min,gamma_tilde,status")?;
        for r in rows {
            let g = r.gamma_tilde.map(|g| g.to_string()).unwrap_or_default();
            // status may contain commas
            writeln!(
                w,
                "{},{},{},{},{g},\"{}\"",
                r.sigma,
                r.rep_rate,
                r.p_window,
                r.h_min,
                r.status.replace('"', "'")
            )?;
        }
        Ok(())
    })
}

pub fn sweep_reduction_factor(cfg: &PipelineConfig, sigmas: &[f64], rates: &[f64], path: &Path) -> Result<Vec<ReductionRow>> {
    let data = simulate_rates(cfg, rates)?;
    let rows = reduction_table(&data, sigmas, cfg.window_c)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_reduction_csv(path, &rows)?;
    Ok(rows)
}

/// σ grid 0, 0.01, ..., 0.1.
pub fn default_sigma_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 100.0).collect()
}

pub const FIG2_RATES: [f64; 3] = [2.5, 5.0, 7.0];
