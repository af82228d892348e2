use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vcsel_qrng::bits::write_bit_file;
use vcsel_qrng::rng::reference_bits;

fn vqrng(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqrng")).args(args).output().expect("run vqrng")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = vqrng(args);
    assert!(
        o.status.code().is_some_and(|c| c == 0 || c == 2),
        "{args:?} failed: {}",
        stderr(&o)
    );
    o
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "block_n = 256\n\n[grid]\nn_frames = 4000\n";

#[test]
fn staged_run_matches_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let (whole, staged) = (tmp.path().join("whole"), tmp.path().join("staged"));
    let common = |out: &Path| vec!["--config".to_owned(), path(&cfg).to_owned(), "--out".to_owned(), path(out).to_owned()];
    let run = |out: &Path, extra: &[&str]| {
        let mut args = common(out);
        args.extend(extra.iter().map(|s| s.to_string()));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let p = run(&whole, &["pipeline"]);
    run(&staged, &["simulate"]);
    let trace = staged.join("trace.csv");
    run(&staged, &["digitize", "--trace", path(&trace)]);
    run(&staged, &["entropy"]);
    run(&staged, &["extract"]);
    let t = run(&staged, &["test"]);
    assert_eq!(p.status.code(), t.status.code());

    for name in [
        "config.toml",
        "frames.csv",
        "raw.bin",
        "digitize.json",
        "entropy.json",
        "histogram.csv",
        "seed.bin",
        "extracted.bin",
        "extract.json",
        "suite.json",
        "suite.csv",
    ] {
        let a = fs::read(whole.join(name)).unwrap();
        assert!(!a.is_empty(), "{name} empty");
        assert_eq!(a, fs::read(staged.join(name)).unwrap(), "{name} differs");
    }
    assert!(whole.join("manifest.json").exists());
}

#[test]
fn seed_flag_changes_raw_bits() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = |seed: &str, sub: &str| {
        let out = tmp.path().join(sub);
        ok(&["--frames", "300", "--seed", seed, "--out", path(&out), "digitize"]);
        fs::read(out.join("raw.bin")).unwrap()
    };
    let (a, b, c) = (raw("7", "a"), raw("7", "b"), raw("8", "c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn test_subcommand_on_reference_bits() {
    let tmp = tempfile::tempdir().unwrap();
    let bits = tmp.path().join("ref.bin");
    write_bit_file(&bits, &reference_bits(3, 0, 100_000)).unwrap();
    let o = vqrng(&["--out", path(tmp.path()), "test", "--bits", path(&bits)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("all tests passed"));
    assert!(tmp.path().join("suite.csv").exists());

    let zeros = tmp.path().join("zeros.bin");
    write_bit_file(&zeros, &vcsel_qrng::bits::BitStream::zeros(10_000)).unwrap();
    let o = vqrng(&["--out", path(tmp.path()), "test", "--bits", path(&zeros)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stage `test`"));
}

#[test]
fn figure_sweeps_write_data_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path(tmp.path());
    ok(&["--frames", "1500", "--out", out, "fig2a", "--rates", "2.5,7"]);
    for name in ["fig2a_sx_2.5GHz.csv", "fig2a_sx_7GHz.csv", "fig2a_central_mass.csv"] {
        assert!(fs::metadata(tmp.path().join(name)).unwrap().len() > 0, "{name}");
    }
    ok(&["--frames", "1500", "--out", out, "fig2b", "--rates", "2.5,7", "--sigmas", "0,0.05,0.1"]);
    let csv = fs::read_to_string(tmp.path().join("fig2b_reduction.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}

#[test]
fn errors_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "bogus = 1\n").unwrap();
    let o = vqrng(&["--config", path(&bad), "pipeline"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stage `config`"), "{}", stderr(&o));

    let o = vqrng(&["--out", path(tmp.path()), "entropy"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stage `entropy`") && stderr(&o).contains("frames.csv"), "{}", stderr(&o));

    let o = vqrng(&["--frames", "10", "--full", "pipeline"]);
    assert!(!o.status.success());

    let dark = tmp.path().join("dark.toml");
    fs::write(&dark, "[laser]\nbeta_sp = 0.0\n\n[grid]\nn_frames = 200\n").unwrap();
    let o = vqrng(&["--config", path(&dark), "--out", path(tmp.path()), "pipeline"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stage `entropy`") && stderr(&o).contains("no extractable entropy"));
}
