//! `vqrng`: command-line front end for the VCSEL QRNG simulation chain.
//!
//! Every stage reads its inputs from `--input` (default: the output
//! directory) and writes its artifacts into `--out`, so stages can be run
//! one at a time or all at once with `pipeline`.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use vcsel_qrng::bits::read_bit_file;
use vcsel_qrng::digitizer::Digitized;
use vcsel_qrng::entropy::EntropyReport;
use vcsel_qrng::laser::{integrate_sfm, PolarizedTrace};
use vcsel_qrng::pipeline::*;
use vcsel_qrng::stats::SuiteReport;
use vcsel_qrng::Error;

#[derive(Parser)]
#[command(name = "vqrng", version, about = "Gain-switched VCSEL QRNG simulation and post-processing")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the laser and detector noise streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of pump periods to simulate.
    #[arg(long, global = true, conflicts_with = "full")]
    frames: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Full reproduction run of 10⁶ frames.
    #[arg(long, global = true)]
    full: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the laser and write the x/y power trace (trace.csv).
    /// One row per time step: keep --frames small.
    Simulate,
    /// Digitize frames into raw bits (frames.csv, raw.bin, digitize.json).
    Digitize {
        /// Digitize this trace instead of simulating.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Min-entropy, window probability and reduction factor of the raw bits.
    Entropy {
        /// Directory holding frames.csv and raw.bin.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Seed bootstrap, FIR whitening and Toeplitz extraction.
    Extract {
        /// Directory holding raw.bin and entropy.json.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run the statistical test suite on a bit file.
    Test {
        /// Bit file to test (default: extracted.bin in the input directory).
        #[arg(long)]
        bits: Option<PathBuf>,
        /// Directory holding extracted.bin.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// All stages, with a manifest of artifact checksums.
    Pipeline,
    /// S_x histograms at several repetition rates.
    Fig2a {
        /// Repetition rates in GHz.
        #[arg(long, value_delimiter = ',', default_values_t = FIG2_RATES)]
        rates: Vec<f64>,
    },
    /// Reduction factor against detector noise at several repetition rates.
    Fig2b {
        /// Repetition rates in GHz.
        #[arg(long, value_delimiter = ',', default_values_t = FIG2_RATES)]
        rates: Vec<f64>,
        /// Detector noise levels σ, ascending.
        #[arg(long, value_delimiter = ',', default_values_t = default_sigma_grid())]
        sigmas: Vec<f64>,
    },
}

/// Attach a stage tag to a library error, unless it already carries one.
trait Staged<T> {
    fn stage(self, name: &'static str) -> Result<T>;
}

impl<T> Staged<T> for vcsel_qrng::Result<T> {
    fn stage(self, name: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => anyhow!("{e}"),
            e => anyhow!("{}", e.in_stage(name)),
        })
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)
            .map_err(|e| e.in_stage("config"))
            .with_context(|| format!("reading {}", p.display()))
            .map_err(|e| anyhow!("{e:#}"))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.grid.rng_seed = seed;
        cfg.detector.noise_seed = seed;
    }
    if common.full {
        cfg.grid.n_frames = FULL_FRAMES;
    }
    if let Some(frames) = common.frames {
        cfg.grid.n_frames = frames;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate().stage("config")?;
    Ok(cfg)
}

fn out_dir(cfg: &PipelineConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir)
        .map_err(Error::from)
        .stage("write")
        .with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Read an input file, tagging failures with the consuming stage and path.
fn read_input<T>(stage: &'static str, path: &Path, read: impl FnOnce(&Path) -> vcsel_qrng::Result<T>) -> Result<T> {
    read(path).map_err(|e| anyhow!("stage `{stage}` failed: {}: {e}", path.display()))
}

fn simulate(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let trace = integrate_sfm(&cfg.laser, &cfg.pump, &cfg.grid).stage("simulate")?;
    let path = dir.join("trace.csv");
    write_with(&path, |w| trace.write_csv(w)).stage("simulate")?;
    println!("simulate: {} frames, {} samples -> {}", cfg.grid.n_frames, trace.len(), path.display());
    Ok(())
}

fn digitize(cfg: &PipelineConfig, trace: Option<&Path>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let acq = match trace {
        Some(p) => {
            let trace = read_input("digitize", p, |p| PolarizedTrace::read_csv(BufReader::new(File::open(p)?)))?;
            digitize_trace(cfg, &trace).stage("digitize")?
        }
        None => acquire(cfg).stage("simulate")?,
    };
    write_config(dir, cfg).stage("write")?;
    write_digitize_artifacts(dir, &acq).stage("digitize")?;
    let r = &acq.report;
    println!(
        "digitize: {:?} mode, {} frames, {} degenerate, {} raw bits",
        r.mode, r.frames, r.degenerate_frames, r.raw_bits
    );
    Ok(())
}

fn entropy(cfg: &PipelineConfig, input: &Path) -> Result<()> {
    let frames = read_input("entropy", &input.join("frames.csv"), |p| {
        Digitized::read_csv(BufReader::new(File::open(p)?))
    })?;
    let raw = read_input("entropy", &input.join("raw.bin"), read_bit_file)?;
    let (report, hist) = entropy_stage(cfg, &raw, &frames.sx).stage("entropy")?;
    write_entropy_artifacts(out_dir(cfg)?, &report, &hist).stage("entropy")?;
    println!(
        "entropy: h_min {:.4}, P {:.4}, reduction factor {:.4} over {} bits",
        report.h_min, report.p_window, report.gamma_tilde, report.n_bits
    );
    Ok(())
}

fn extract(cfg: &PipelineConfig, input: &Path) -> Result<()> {
    let raw = read_input("extract", &input.join("raw.bin"), read_bit_file)?;
    let report: EntropyReport = read_input("extract", &input.join("entropy.json"), read_json)?;
    let extracted = extract_stage(cfg, &raw, report.gamma_tilde).stage("extract")?;
    write_extract_artifacts(out_dir(cfg)?, &extracted).stage("extract")?;
    let r = &extracted.report;
    match r.seed_shortfall {
        Some(s) => println!("extract: {} raw bits are too few to bootstrap the seed (short by {s})", r.raw_bits),
        None => println!(
            "extract: {} raw bits -> {} blocks of {} -> {} output bits",
            r.raw_bits, r.blocks, r.block_m, r.output_bits
        ),
    }
    Ok(())
}

fn print_suite(suite: &SuiteReport) {
    for s in &suite.summary {
        println!(
            "  {:<22} {}/{} passed{}",
            s.name,
            s.passed,
            s.sequences,
            s.uniformity_p.map(|u| format!(", uniformity p {u:.4}")).unwrap_or_default()
        );
    }
    for (i, seq) in suite.sequences.iter().enumerate() {
        for skip in &seq.skipped {
            println!("  sequence {i}: {} skipped ({})", skip.name, skip.reason);
        }
    }
}

/// Nonzero exit when any sequence fails or skips a test.
fn suite_verdict(suite: &SuiteReport) -> ExitCode {
    if suite.all_passed() {
        println!("test: all tests passed at alpha = {}", suite.alpha);
        ExitCode::SUCCESS
    } else {
        eprintln!("vqrng: stage `test`: not every test passed at alpha = {}", suite.alpha);
        ExitCode::from(2)
    }
}

fn test(cfg: &PipelineConfig, bits: &Path) -> Result<ExitCode> {
    let data = read_input("test", bits, read_bit_file)?;
    let suite = test_stage(cfg, &data);
    write_test_artifacts(out_dir(cfg)?, &suite).stage("test")?;
    println!("test: {} bits in {} sequence(s)", data.len(), suite.sequences.len());
    print_suite(&suite);
    Ok(suite_verdict(&suite))
}

fn pipeline(cfg: &PipelineConfig) -> Result<ExitCode> {
    let out = run_pipeline(cfg).stage("pipeline")?;
    println!(
        "pipeline: {} frames -> {} raw bits, reduction factor {:.4}, {} output bits",
        out.digitize.frames, out.digitize.raw_bits, out.entropy.gamma_tilde, out.extract.output_bits
    );
    if let Some(s) = out.extract.seed_shortfall {
        println!("  seed bootstrap short by {s} bits: too few frames for extraction");
    }
    print_suite(&out.suite);
    println!("manifest: {}", cfg.output_dir.join("manifest.json").display());
    Ok(suite_verdict(&out.suite))
}

fn fig2a(cfg: &PipelineConfig, rates: &[f64]) -> Result<()> {
    let dir = out_dir(cfg)?;
    let hists = sweep_sx_histograms(cfg, rates, dir).stage("fig2a")?;
    for h in &hists {
        println!(
            "fig2a: {} GHz, {} frames, central mass {:.4} -> {}",
            h.rep_rate,
            h.frames,
            h.central_mass,
            dir.join(fig2a_file_name(h.rep_rate)).display()
        );
    }
    Ok(())
}

fn fig2b(cfg: &PipelineConfig, rates: &[f64], sigmas: &[f64]) -> Result<()> {
    let path = out_dir(cfg)?.join("fig2b_reduction.csv");
    let rows = sweep_reduction_factor(cfg, sigmas, rates, &path).stage("fig2b")?;
    for &rate in rates {
        let curve: Vec<String> = rows
            .iter()
            .filter(|r| r.rep_rate == rate)
            .map(|r| r.gamma_tilde.map(|g| format!("{g:.3}")).unwrap_or_else(|| "-".into()))
            .collect();
        println!("fig2b: {rate} GHz: {}", curve.join(" "));
    }
    println!("fig2b: {} rows -> {}", rows.len(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli.common)?;
    let input = |given: Option<PathBuf>| given.unwrap_or_else(|| cfg.output_dir.clone());
    match cli.command {
        Command::Simulate => simulate(&cfg)?,
        Command::Digitize { trace } => digitize(&cfg, trace.as_deref())?,
        Command::Entropy { input: i } => entropy(&cfg, &input(i))?,
        Command::Extract { input: i } => extract(&cfg, &input(i))?,
        Command::Test { bits, input: i } => {
            let bits = bits.unwrap_or_else(|| input(i).join("extracted.bin"));
            return test(&cfg, &bits);
        }
        Command::Pipeline => return pipeline(&cfg),
        Command::Fig2a { rates } => fig2a(&cfg, &rates)?,
        Command::Fig2b { rates, sigmas } => fig2b(&cfg, &rates, &sigmas)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("vqrng: {e:#}");
            ExitCode::FAILURE
        }
    }
}
