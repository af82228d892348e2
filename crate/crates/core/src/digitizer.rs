//! Frame slicing and one-bit digitization, either by comparator latch on a
//! detected trace or by comparing the pulse-energy ratio S_x to a threshold.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::bits::BitStream;
use crate::error::{Error, Result};
use crate::laser::PumpWaveform;

/// Placement of the latch instant and energy window inside each frame, all
/// in ns from the frame start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub period: f64,
    pub latch_offset: f64,
    pub window_start: f64,
    pub window_end: f64,
}

impl FrameSpec {
    /// Full-frame energy window, latch at the middle of the pump-on interval.
    pub fn for_pump(pump: &PumpWaveform) -> Self {
        let period = pump.period();
        FrameSpec {
            period,
            latch_offset: 0.5 * pump.duty * period,
            window_start: 0.0,
            window_end: period,
        }
    }

    /// Same relative placement for a different repetition period.
    pub fn rescaled(&self, period: f64) -> Self {
        let s = period / self.period;
        FrameSpec {
            period,
            latch_offset: self.latch_offset * s,
            window_start: self.window_start * s,
            window_end: self.window_end * s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::invalid("period", "must be > 0"));
        }
        if !(0.0 <= self.latch_offset && self.latch_offset < self.period) {
            return Err(Error::invalid("latch_offset", "must lie in [0, period)"));
        }
        if !(0.0 <= self.window_start
            && self.window_start < self.window_end
            && self.window_end <= self.period)
        {
            return Err(Error::invalid(
                "window",
                "need 0 <= window_start < window_end <= period",
            ));
        }
        Ok(())
    }

    fn index(&self, dt: f64, frame: usize, offset: f64) -> usize {
        ((frame as f64 * self.period + offset) / dt).round() as usize
    }

    /// Global sample range `[start, end)` of the energy window of `frame`.
    pub fn window_samples(&self, dt: f64, frame: usize) -> (usize, usize) {
        (
            self.index(dt, frame, self.window_start),
            self.index(dt, frame, self.window_end),
        )
    }

    /// Global sample index of the latch instant of `frame`.
    pub fn latch_sample(&self, dt: f64, frame: usize) -> usize {
        self.index(dt, frame, self.latch_offset)
    }

    /// First sample of `frame`.
    pub fn frame_start(&self, dt: f64, frame: usize) -> usize {
        self.index(dt, frame, 0.0)
    }

    /// Number of complete frames in `n_samples` samples.
    pub fn complete_frames(&self, dt: f64, n_samples: usize) -> usize {
        let mut frames = (n_samples as f64 * dt / self.period).floor() as usize + 1;
        while frames > 0 && self.frame_start(dt, frames) > n_samples {
            frames -= 1;
        }
        frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparatorSpec {
    /// Threshold in trace units.
    pub v_th: f64,
}

impl Default for ComparatorSpec {
    /// Zero: the balanced point of a differential signal.
    fn default() -> Self {
        ComparatorSpec { v_th: 0.0 }
    }
}

/// One bit per frame: 1 iff the sample nearest the latch instant is `>= v_th`.
pub fn comparator_bits(samples: &[f64], dt: f64, frames: &FrameSpec, v_th: f64) -> Result<BitStream> {
    frames.validate()?;
    let n = frames.complete_frames(dt, samples.len());
    if n == 0 {
        return Err(Error::TraceTooShort {
            samples: samples.len(),
            needed: frames.frame_start(dt, 1),
        });
    }
    Ok((0..n)
        .map(|f| samples[frames.latch_sample(dt, f).min(samples.len() - 1)] >= v_th)
        .collect())
}

/// Rectangle-rule energy of `px`, `py` over each frame's window.
pub fn frame_energies(px: &[f64], py: &[f64], dt: f64, frames: &FrameSpec) -> Result<Vec<(f64, f64)>> {
    frames.validate()?;
    if px.len() != py.len() {
        return Err(Error::LengthMismatch {
            expected: px.len(),
            got: py.len(),
        });
    }
    let n = frames.complete_frames(dt, px.len());
    (0..n)
        .map(|f| {
            let (a, b) = frames.window_samples(dt, f);
            let b = b.min(px.len());
            if a >= b {
                return Err(Error::EmptyWindow { frame: f });
            }
            Ok(window_energy(&px[a..b], &py[a..b], dt))
        })
        .collect()
}

#[inline]
pub fn window_energy(px: &[f64], py: &[f64], dt: f64) -> (f64, f64) {
    (px.iter().sum::<f64>() * dt, py.iter().sum::<f64>() * dt)
}

/// S_x = E_x / (E_x + E_y). Computed from the smaller share so that
/// `normalized_sx(a, b) + normalized_sx(b, a) == 1` exactly.
pub fn normalized_sx(ex: f64, ey: f64) -> Result<f64> {
    if ex < 0.0 || ey < 0.0 || ex.is_nan() || ey.is_nan() {
        return Err(Error::invalid("energy", "must be >= 0"));
    }
    let total = ex + ey;
    if total <= 0.0 {
        return Err(Error::DegenerateFrame);
    }
    Ok(if ex <= ey {
        ex / total
    } else {
        1.0 - ey / total
    })
}

pub fn energy_bits(sx: &[f64], threshold: f64) -> BitStream {
    sx.iter().map(|&s| s >= threshold).collect()
}

/// Per-frame digitization result. `sx` and `bit` are `None` for frames
/// with zero total energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub ex: f64,
    pub ey: f64,
    pub sx: Option<f64>,
    pub bit: Option<bool>,
}

impl FrameRecord {
    pub fn from_energies(ex: f64, ey: f64, threshold: f64) -> Result<Self> {
        match normalized_sx(ex, ey) {
            Ok(sx) => Ok(FrameRecord {
                ex,
                ey,
                sx: Some(sx),
                bit: Some(sx >= threshold),
            }),
            Err(Error::DegenerateFrame) => Ok(FrameRecord {
                ex,
                ey,
                sx: None,
                bit: None,
            }),
            Err(e) => Err(e),
        }
    }
}

/// Frame records plus the derived raw bits, S_x list and degenerate count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Digitized {
    pub records: Vec<FrameRecord>,
    pub bits: BitStream,
    pub sx: Vec<f64>,
    pub degenerate: usize,
}

impl Digitized {
    pub fn push(&mut self, rec: FrameRecord) {
        match (rec.sx, rec.bit) {
            (Some(s), Some(b)) => {
                self.sx.push(s);
                self.bits.push(b);
            }
            _ => self.degenerate += 1,
        }
        self.records.push(rec);
    }

    pub fn from_energies(energies: &[(f64, f64)], threshold: f64) -> Result<Self> {
        let mut out = Digitized::default();
        for &(ex, ey) in energies {
            out.push(FrameRecord::from_energies(ex, ey, threshold)?);
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "frame,ex,ey,sx,bit")?;
        for (i, r) in self.records.iter().enumerate() {
            let sx = r.sx.map(|s| s.to_string()).unwrap_or_default();
            let bit = r.bit.map(|b| (b as u8).to_string()).unwrap_or_default();
            writeln!(out, "{i},{},{},{sx},{bit}", r.ex, r.ey)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "frame csv",
            reason,
        };
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "frame,ex,ey,sx,bit" => {}
            _ => return Err(bad("missing `frame,ex,ey,sx,bit` header".into())),
        }
        let mut out = Digitized::default();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(bad(format!("row {}: expected 5 columns", row + 1)));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| bad(format!("row {}: {e}", row + 1)))
            };
            let sx = if cols[3].is_empty() { None } else { Some(num(cols[3])?) };
            let bit = match cols[4] {
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                other => return Err(bad(format!("row {}: bad bit {other:?}", row + 1))),
            };
            out.push(FrameRecord {
                ex: num(cols[1])?,
                ey: num(cols[2])?,
                sx,
                bit,
            });
        }
        Ok(out)
    }
}

/// Threshold halfway between the two cluster means of `samples`
/// (1-D two-means, seeded at the extremes).
pub fn midpoint_threshold(samples: &[f64]) -> Option<f64> {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) || lo == hi {
        return None;
    }
    let mut th = 0.5 * (lo + hi);
    for _ in 0..100 {
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for &v in samples {
            if v >= th {
                s1 += v;
                n1 += 1;
            } else {
                s0 += v;
                n0 += 1;
            }
        }
        if n0 == 0 || n1 == 0 {
            break;
        }
        let next = 0.5 * (s0 / n0 as f64 + s1 / n1 as f64);
        if next == th {
            break;
        }
        th = next;
    }
    Some(th)
}

/// Fraction of frames with S_x outside `[lo, hi]` on which the comparator
/// bit equals the energy bit. `None` when no frame qualifies.
pub fn bit_agreement(records: &[FrameRecord], comparator: &BitStream, lo: f64, hi: f64) -> Option<f64> {
    let (mut agree, mut total) = (0usize, 0usize);
    for (i, r) in records.iter().enumerate().take(comparator.len()) {
        if let (Some(sx), Some(bit)) = (r.sx, r.bit) {
            if sx < lo || sx > hi {
                total += 1;
                agree += (bit == comparator.get(i)) as usize;
            }
        }
    }
    (total > 0).then(|| agree as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> FrameSpec {
        FrameSpec {
            period: 0.2,
            latch_offset: 0.05,
            window_start: 0.0,
            window_end: 0.2,
        }
    }

    #[test]
    fn comparator_levels_and_tie() {
        let dt = 1e-3;
        let v_th = 0.7;
        let n = 1000;
        let above = comparator_bits(&vec![v_th + 1.0; n], dt, &spec(), v_th).unwrap();
        assert_eq!(above.len(), 5);
        assert_eq!(above.count_ones(), 5);
        let below = comparator_bits(&vec![v_th - 1.0; n], dt, &spec(), v_th).unwrap();
        assert_eq!(below.count_ones(), 0);
        let equal = comparator_bits(&vec![v_th; n], dt, &spec(), v_th).unwrap();
        assert_eq!(equal.count_ones(), 5);
    }

    #[test]
    fn comparator_rejects_short_trace() {
        assert!(matches!(
            comparator_bits(&[1.0; 150], 1e-3, &spec(), 0.0),
            Err(Error::TraceTooShort { .. })
        ));
    }

    #[test]
    fn latch_reads_nearest_sample() {
        let dt = 1e-3;
        let mut x = vec![0.0; 400];
        x[50] = 1.0; // frame 0 latch
        x[251] = 1.0; // one sample late for frame 1
        let bits = comparator_bits(&x, dt, &spec(), 0.5).unwrap();
        assert_eq!(bits.to_string(), "10");
    }

    #[test]
    fn energy_examples() {
        let dt = 1e-3;
        let e = frame_energies(&[2.0; 200], &[0.0; 200], dt, &spec()).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0].0 - 0.4).abs() < 1e-12);
        assert_eq!(e[0].1, 0.0);
        let x: Vec<f64> = (0..400).map(|i| (i % 17) as f64).collect();
        for (ex, ey) in frame_energies(&x, &x, dt, &spec()).unwrap() {
            assert_eq!(ex, ey);
        }
    }

    #[test]
    fn empty_window_is_an_error() {
        let narrow = FrameSpec {
            window_start: 0.1,
            window_end: 0.1002,
            ..spec()
        };
        assert!(matches!(
            frame_energies(&[1.0; 400], &[1.0; 400], 1e-3, &narrow),
            Err(Error::EmptyWindow { frame: 0 })
        ));
    }

    #[test]
    fn sx_examples() {
        assert_eq!(normalized_sx(2.0, 2.0).unwrap(), 0.5);
        assert_eq!(normalized_sx(3.0, 0.0).unwrap(), 1.0);
        assert_eq!(normalized_sx(0.0, 3.0).unwrap(), 0.0);
        assert_eq!(normalized_sx(1.0, 3.0).unwrap(), 0.25);
        assert!(matches!(normalized_sx(0.0, 0.0), Err(Error::DegenerateFrame)));
    }

    #[test]
    fn energy_bits_examples() {
        assert_eq!(energy_bits(&[0.9, 0.1, 0.5], 0.5).to_string(), "101");
        assert_eq!(energy_bits(&[0.0; 4], 0.5).count_ones(), 0);
        assert_eq!(energy_bits(&[0.0, 0.3, 1.0], 0.0).count_ones(), 3);
    }

    #[test]
    fn degenerate_frames_are_counted_not_bits() {
        let d = Digitized::from_energies(&[(1.0, 0.0), (0.0, 0.0), (0.2, 0.8)], 0.5).unwrap();
        assert_eq!(d.degenerate, 1);
        assert_eq!(d.bits.to_string(), "10");
        assert_eq!(d.sx.len(), 2);
    }

    #[test]
    fn records_csv_round_trip() {
        let d = Digitized::from_energies(&[(1.5, 0.25), (0.0, 0.0), (0.125, 3.0)], 0.5).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("frame,ex,ey,sx,bit\n0,1.5,0.25,"));
        assert!(text.contains("\n1,0,0,,\n"));
        assert_eq!(Digitized::read_csv(&buf[..]).unwrap(), d);
    }

    #[test]
    fn two_means_threshold() {
        let mut v: Vec<f64> = (0..100).map(|i| 0.1 + 0.001 * i as f64).collect();
        v.extend((0..100).map(|i| 5.0 + 0.001 * i as f64));
        let th = midpoint_threshold(&v).unwrap();
        assert!((th - 2.5995).abs() < 1e-9, "{th}");
        assert_eq!(midpoint_threshold(&[1.0, 1.0]), None);
    }

    #[test]
    fn complete_frames_count() {
        let s = spec();
        assert_eq!(s.complete_frames(1e-3, 199), 0);
        assert_eq!(s.complete_frames(1e-3, 200), 1);
        assert_eq!(s.complete_frames(1e-3, 1000), 5);
        let odd = FrameSpec::for_pump(&PumpWaveform {
            rep_rate: 7.0,
            ..PumpWaveform::default()
        });
        let n = odd.frame_start(1e-3, 70);
        assert_eq!(odd.complete_frames(1e-3, n), 70);
        assert_eq!(odd.complete_frames(1e-3, n - 1), 69);
    }

    proptest! {
        #[test]
        fn sx_complement_is_exact(ex in 0.0f64..1e6, ey in 0.0f64..1e6) {
            prop_assume!(ex + ey > 0.0);
            let a = normalized_sx(ex, ey).unwrap();
            let b = normalized_sx(ey, ex).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a + b, 1.0);
        }

        #[test]
        fn scale_invariance(
            px in proptest::collection::vec(0.0f64..10.0, 400),
            py in proptest::collection::vec(0.0f64..10.0, 400),
            c in 0.01f64..100.0,
        ) {
            let dt = 1e-3;
            let base = frame_energies(&px, &py, dt, &spec()).unwrap();
            let spx: Vec<f64> = px.iter().map(|v| v * c).collect();
            let spy: Vec<f64> = py.iter().map(|v| v * c).collect();
            let scaled = frame_energies(&spx, &spy, dt, &spec()).unwrap();
            for (&(ex, ey), &(sex, sey)) in base.iter().zip(&scaled) {
                let s0 = normalized_sx(ex, ey).unwrap();
                let s1 = normalized_sx(sex, sey).unwrap();
                prop_assert!((s0 - s1).abs() < 1e-12);
                if (s0 - 0.5).abs() > 1e-9 {
                    prop_assert_eq!(s0 >= 0.5, s1 >= 0.5);
                }
            }
        }
    }
}
