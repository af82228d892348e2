//! Spin-flip rate equations for a gain-switched VCSEL.
//!
//! State: circularly polarized field amplitudes `E+`, `E-`, total carrier
//! inversion `N` (1 at threshold) and the spin imbalance `n` between the
//! two carrier reservoirs. With pump `mu` in units of threshold:
//!
//! ```text
//! dE±/dt = kappa (1 + i alpha) (N ± n - 1) E± - (gamma_a + i gamma_p) E∓ + F±
//! dN/dt  = -gamma_n [N (1 + |E+|² + |E-|²) - mu + n (|E+|² - |E-|²)]
//! dn/dt  = -gamma_s n - gamma_n [n (|E+|² + |E-|²) + N (|E+|² - |E-|²)]
//! ```
//!
//! `F±` is complex white noise with `<|F±|²> = beta_sp gamma_n max(N ± n, 0)`
//! per unit time. Optional gain compression `eps_self`, `eps_cross` acts on
//! the linear x/y modes; with `eps_cross > eps_self` the mode that first
//! reaches appreciable intensity suppresses the other within the pulse.
//!
//! Integration is an exponential Euler–Maruyama scheme on a fixed step: the
//! field equations are linear in `E±` once `N`, `n` and the intensities are
//! frozen, so that 2×2 system is propagated exactly over each step; carriers
//! are explicit Euler and the Langevin term is added with `sqrt(dt)`
//! scaling. (Plain explicit Euler on the field overshoots once the carrier
//! overshoot pushes `kappa alpha (N - 1) dt` towards 1 rad per step.) The noise
//! for frame `f` is drawn from stream `f` of the laser noise key.

use std::io::{self, BufRead, Write};

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, NoiseKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VcselParams {
    /// Field decay rate (1/ns).
    pub kappa: f64,
    /// Linewidth enhancement factor.
    pub alpha: f64,
    /// Carrier decay rate (1/ns).
    pub gamma_n: f64,
    /// Spin-flip relaxation rate (1/ns).
    pub gamma_s: f64,
    /// Linear dichroism (1/ns).
    pub gamma_a: f64,
    /// Linear birefringence (rad/ns).
    pub gamma_p: f64,
    /// Spontaneous emission factor.
    pub beta_sp: f64,
    /// Gain compression of each linear mode by its own intensity.
    pub eps_self: f64,
    /// Gain compression of each linear mode by the orthogonal mode's
    /// intensity. `eps_cross > eps_self` makes x/y coexistence unstable.
    pub eps_cross: f64,
}

impl Default for VcselParams {
    fn default() -> Self {
        VcselParams {
            kappa: 300.0,
            alpha: 3.0,
            gamma_n: 1.0,
            gamma_s: 50.0,
            gamma_a: 0.0,
            gamma_p: 30.0,
            beta_sp: 1e-5,
            eps_self: 0.0,
            eps_cross: 0.1,
        }
    }
}

impl VcselParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.kappa,
            self.alpha,
            self.gamma_n,
            self.gamma_s,
            self.gamma_a,
            self.gamma_p,
            self.beta_sp,
            self.eps_self,
            self.eps_cross,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("laser", "all parameters must be finite"));
        }
        if self.kappa <= 0.0 {
            return Err(Error::invalid("kappa", "must be > 0"));
        }
        if self.gamma_n <= 0.0 {
            return Err(Error::invalid("gamma_n", "must be > 0"));
        }
        if self.gamma_s < 0.0 {
            return Err(Error::invalid("gamma_s", "must be >= 0"));
        }
        if self.beta_sp < 0.0 {
            return Err(Error::invalid("beta_sp", "must be >= 0"));
        }
        if self.eps_self < 0.0 || self.eps_cross < 0.0 {
            return Err(Error::invalid("eps_self/eps_cross", "must be >= 0"));
        }
        Ok(())
    }
}

/// Square-wave gain-switching pump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PumpWaveform {
    /// Pulse repetition rate (GHz).
    pub rep_rate: f64,
    /// Fraction of each period spent at `mu_on`.
    pub duty: f64,
    pub mu_off: f64,
    pub mu_on: f64,
}

impl Default for PumpWaveform {
    fn default() -> Self {
        PumpWaveform {
            rep_rate: 2.5,
            duty: 0.25,
            mu_off: 0.3,
            mu_on: 10.0,
        }
    }
}

impl PumpWaveform {
    pub fn validate(&self) -> Result<()> {
        if !(self.rep_rate.is_finite() && self.rep_rate > 0.0) {
            return Err(Error::invalid("rep_rate", "must be > 0"));
        }
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return Err(Error::invalid("duty", "must lie in (0, 1)"));
        }
        if !(self.mu_off.is_finite() && self.mu_on.is_finite() && self.mu_off < self.mu_on) {
            return Err(Error::invalid("mu_off", "must be finite and below mu_on"));
        }
        Ok(())
    }

    /// Period in ns.
    pub fn period(&self) -> f64 {
        1.0 / self.rep_rate
    }

    /// Pump level at time `t` (ns).
    pub fn pump_at(&self, t: f64) -> f64 {
        let period = self.period();
        let phase = t.rem_euclid(period) / period;
        if phase < self.duty {
            self.mu_on
        } else {
            self.mu_off
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimGrid {
    /// Integration step (ns).
    pub dt: f64,
    pub n_frames: usize,
    pub rng_seed: u64,
}

impl Default for SimGrid {
    fn default() -> Self {
        SimGrid {
            dt: 1e-3,
            n_frames: 100_000,
            rng_seed: 1,
        }
    }
}

impl SimGrid {
    pub fn validate(&self, pump: &PumpWaveform) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        // Small slack so that e.g. dt = 1/(100 * rate) computed in floating
        // point is still accepted.
        if self.dt > pump.period() / 100.0 * (1.0 + 1e-9) {
            return Err(Error::invalid(
                "dt",
                format!(
                    "{} ns leaves fewer than 100 steps per {} ns period",
                    self.dt,
                    pump.period()
                ),
            ));
        }
        Ok(())
    }

    /// First integration step of frame `frame`.
    pub fn frame_start(&self, pump: &PumpWaveform, frame: usize) -> usize {
        (frame as f64 * pump.period() / self.dt).round() as usize
    }

    pub fn total_steps(&self, pump: &PumpWaveform) -> usize {
        self.frame_start(pump, self.n_frames)
    }
}

/// Circular basis → linear basis.
pub fn to_linear_basis(e_plus: Complex64, e_minus: Complex64) -> (Complex64, Complex64) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let ex = (e_plus + e_minus) * s;
    let ey = Complex64::new(0.0, -1.0) * (e_plus - e_minus) * s;
    (ex, ey)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfmState {
    pub e_plus: Complex64,
    pub e_minus: Complex64,
    /// Total carrier inversion (1 at threshold).
    pub carriers: f64,
    /// Spin imbalance.
    pub spin: f64,
}

impl SfmState {
    /// Zero field with carriers at their field-free equilibrium `mu`.
    pub fn dark(mu: f64) -> Self {
        SfmState {
            e_plus: Complex64::new(0.0, 0.0),
            e_minus: Complex64::new(0.0, 0.0),
            carriers: mu,
            spin: 0.0,
        }
    }

    pub fn total_power(&self) -> f64 {
        self.e_plus.norm_sqr() + self.e_minus.norm_sqr()
    }

    /// `(|E_x|², |E_y|²)`.
    pub fn linear_powers(&self) -> (f64, f64) {
        let (ex, ey) = to_linear_basis(self.e_plus, self.e_minus);
        (ex.norm_sqr(), ey.norm_sqr())
    }

    fn is_finite(&self) -> bool {
        self.e_plus.is_finite()
            && self.e_minus.is_finite()
            && self.carriers.is_finite()
            && self.spin.is_finite()
    }
}

/// Fixed-step Euler–Maruyama integrator for the spin-flip model.
#[derive(Debug, Clone)]
pub struct SfmIntegrator {
    params: VcselParams,
    dt: f64,
    sqrt_half_dt: f64,
    state: SfmState,
    step: u64,
}

impl SfmIntegrator {
    pub fn new(params: VcselParams, dt: f64, initial: SfmState) -> Self {
        SfmIntegrator {
            params,
            dt,
            sqrt_half_dt: (0.5 * dt).sqrt(),
            state: initial,
            step: 0,
        }
    }

    pub fn state(&self) -> &SfmState {
        &self.state
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Advance one step at pump level `mu`. `noise` is consulted only when
    /// `beta_sp > 0`.
    pub fn step(&mut self, mu: f64, noise: Option<&mut ChaCha8Rng>) -> Result<()> {
        let p = &self.params;
        let SfmState {
            e_plus,
            e_minus,
            carriers: n_tot,
            spin,
        } = self.state;
        let i_plus = e_plus.norm_sqr();
        let i_minus = e_minus.norm_sqr();
        let gain = Complex64::new(p.kappa, p.kappa * p.alpha);

        // Linear-mode gain compression, rotated into the circular basis:
        // the mean acts on E± itself, the x/y difference couples E± to E∓
        // like an intensity-dependent dichroism.
        let (mut compress_mean, mut compress_diff) = (0.0, 0.0);
        if p.eps_self != 0.0 || p.eps_cross != 0.0 {
            let (ix, iy) = self.state.linear_powers();
            let gx = -p.kappa * (p.eps_self * ix + p.eps_cross * iy);
            let gy = -p.kappa * (p.eps_self * iy + p.eps_cross * ix);
            compress_mean = 0.5 * (gx + gy);
            compress_diff = 0.5 * (gx - gy);
        }
        // dE/dt = M E with M = [[a+, -c], [-c, a-]], coefficients frozen
        // over the step and propagated exactly.
        let c = Complex64::new(p.gamma_a - compress_diff, p.gamma_p);
        let a_plus = gain * (n_tot + spin - 1.0) + compress_mean;
        let a_minus = gain * (n_tot - spin - 1.0) + compress_mean;
        let (new_plus, new_minus) = propagate_2x2(a_plus, a_minus, -c, self.dt, e_plus, e_minus);
        let dn_tot =
            -p.gamma_n * (n_tot * (1.0 + i_plus + i_minus) - mu + spin * (i_plus - i_minus));
        let dspin =
            -p.gamma_s * spin - p.gamma_n * (spin * (i_plus + i_minus) + n_tot * (i_plus - i_minus));

        let mut next = SfmState {
            e_plus: new_plus,
            e_minus: new_minus,
            carriers: n_tot + dn_tot * self.dt,
            spin: spin + dspin * self.dt,
        };

        if p.beta_sp > 0.0 {
            if let Some(rng) = noise {
                let scale = p.beta_sp * p.gamma_n;
                let amp_plus = (scale * (n_tot + spin).max(0.0)).sqrt() * self.sqrt_half_dt;
                let amp_minus = (scale * (n_tot - spin).max(0.0)).sqrt() * self.sqrt_half_dt;
                let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
                next.e_plus += Complex64::new(z[0], z[1]) * amp_plus;
                next.e_minus += Complex64::new(z[2], z[3]) * amp_minus;
            }
        }

        if !next.is_finite() {
            return Err(Error::IntegrationDiverged { step: self.step });
        }
        self.state = next;
        self.step += 1;
        Ok(())
    }
}

/// `exp(M dt) (u, v)` for the symmetric matrix `M = [[a, b], [b, d]]`.
fn propagate_2x2(
    a: Complex64,
    d: Complex64,
    b: Complex64,
    dt: f64,
    u: Complex64,
    v: Complex64,
) -> (Complex64, Complex64) {
    let mean = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let q = (half_diff * half_diff + b * b).sqrt();
    let qt = q * dt;
    // sinh(qt)/q, with the series near qt = 0
    let (cosh, sinh_over_q) = if qt.norm() < 1e-4 {
        (1.0 + 0.5 * qt * qt, dt * (1.0 + qt * qt / 6.0))
    } else {
        (qt.cosh(), qt.sinh() / q)
    };
    let scale = (mean * dt).exp();
    let nu = scale * ((cosh + sinh_over_q * half_diff) * u + sinh_over_q * b * v);
    let nv = scale * (sinh_over_q * b * u + (cosh - sinh_over_q * half_diff) * v);
    (nu, nv)
}

/// Sampled x/y optical power with uniform spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizedTrace {
    pub dt: f64,
    pub px: Vec<f64>,
    pub py: Vec<f64>,
}

impl PolarizedTrace {
    pub fn len(&self) -> usize {
        self.px.len()
    }

    pub fn is_empty(&self) -> bool {
        self.px.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t_ns,px,py")?;
        for (i, (x, y)) in self.px.iter().zip(&self.py).enumerate() {
            writeln!(out, "{},{},{}", i as f64 * self.dt, x, y)?;
        }
        Ok(())
    }

    /// Reads the `t_ns,px,py` format; `dt` is taken from the first two rows.
    pub fn read_csv<R: BufRead>(input: R) -> Result<PolarizedTrace> {
        let bad = |reason: String| Error::Format {
            what: "trace csv",
            reason,
        };
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "t_ns,px,py" => {}
            _ => return Err(bad("missing `t_ns,px,py` header".into())),
        }
        let (mut t, mut px, mut py) = (Vec::new(), Vec::new(), Vec::new());
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", row + 1)))?;
            if cols.len() != 3 {
                return Err(bad(format!("row {}: expected 3 columns", row + 1)));
            }
            t.push(cols[0]);
            px.push(cols[1]);
            py.push(cols[2]);
        }
        if t.len() < 2 {
            return Err(bad("need at least two samples".into()));
        }
        Ok(PolarizedTrace {
            dt: t[1] - t[0],
            px,
            py,
        })
    }
}

/// Runs the gain-switched simulation frame by frame, handing each frame's
/// x/y power samples to `sink` in order. Sample `k` of the run is the state
/// at `t = k dt`, before step `k` is applied.
pub fn simulate_frames<F>(
    params: &VcselParams,
    pump: &PumpWaveform,
    grid: &SimGrid,
    initial: SfmState,
    mut sink: F,
) -> Result<SfmState>
where
    F: FnMut(usize, &[f64], &[f64]) -> Result<()>,
{
    params.validate()?;
    pump.validate()?;
    grid.validate(pump)?;

    let key = NoiseKey::new(grid.rng_seed, Domain::Laser);
    let mut integ = SfmIntegrator::new(*params, grid.dt, initial);
    let mut px = Vec::new();
    let mut py = Vec::new();
    for frame in 0..grid.n_frames {
        let start = grid.frame_start(pump, frame);
        let end = grid.frame_start(pump, frame + 1);
        let mut rng = key.stream(frame as u64);
        px.clear();
        py.clear();
        for k in start..end {
            let (x, y) = integ.state().linear_powers();
            px.push(x);
            py.push(y);
            let mu = pump.pump_at(k as f64 * grid.dt);
            integ.step(mu, Some(&mut rng))?;
        }
        sink(frame, &px, &py)?;
    }
    Ok(*integ.state())
}

/// Whole-run trace starting from the dark state at `mu_off`.
pub fn integrate_sfm(
    params: &VcselParams,
    pump: &PumpWaveform,
    grid: &SimGrid,
) -> Result<PolarizedTrace> {
    integrate_sfm_from(params, pump, grid, SfmState::dark(pump.mu_off))
}

pub fn integrate_sfm_from(
    params: &VcselParams,
    pump: &PumpWaveform,
    grid: &SimGrid,
    initial: SfmState,
) -> Result<PolarizedTrace> {
    let mut trace = PolarizedTrace {
        dt: grid.dt,
        px: Vec::with_capacity(grid.total_steps(pump)),
        py: Vec::with_capacity(grid.total_steps(pump)),
    };
    simulate_frames(params, pump, grid, initial, |_, px, py| {
        trace.px.extend_from_slice(px);
        trace.py.extend_from_slice(py);
        Ok(())
    })?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    const C0: Complex64 = Complex64::new(0.0, 0.0);

    #[test]
    fn pump_square_wave() {
        let w = PumpWaveform::default();
        let period = w.period();
        assert_eq!(w.pump_at(0.0), w.mu_on);
        assert_eq!(w.pump_at(0.75 * period), w.mu_off);
        for &t in &[0.0, 0.03, 0.07, 0.21, 0.37] {
            assert_eq!(w.pump_at(t), w.pump_at(t + period));
        }
    }

    #[test]
    fn basis_examples() {
        let one = Complex64::new(1.0, 0.0);
        let (ex, ey) = to_linear_basis(one, one);
        assert!((ex - Complex64::new(2f64.sqrt(), 0.0)).norm() < 1e-15);
        assert_eq!(ey.norm(), 0.0);

        let (ex, ey) = to_linear_basis(one, -one);
        assert_eq!(ex.norm(), 0.0);
        assert!((ey.norm() - 2f64.sqrt()).abs() < 1e-15);

        let (ex, ey) = to_linear_basis(one, C0);
        assert!((ex.norm_sqr() - 0.5).abs() < 1e-15);
        assert!((ey.norm_sqr() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = VcselParams::default();
        p.kappa = 0.0;
        assert!(p.validate().is_err());
        let mut w = PumpWaveform::default();
        w.mu_on = w.mu_off;
        assert!(w.validate().is_err());
        let grid = SimGrid {
            dt: 0.01,
            ..SimGrid::default()
        };
        assert!(grid.validate(&PumpWaveform::default()).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let mut integ = SfmIntegrator::new(
            VcselParams::default(),
            1e-3,
            SfmState {
                e_plus: Complex64::new(1e200, 0.0),
                ..SfmState::dark(1.0)
            },
        );
        let err = integ.step(1.0, None).unwrap_err();
        assert!(matches!(err, Error::IntegrationDiverged { step: 0 }));
    }

    #[test]
    fn noise_off_dark_stays_dark() {
        let params = VcselParams {
            beta_sp: 0.0,
            ..VcselParams::default()
        };
        let pump = PumpWaveform {
            mu_off: 0.5,
            mu_on: 0.9,
            ..PumpWaveform::default()
        };
        let grid = SimGrid {
            n_frames: 5,
            ..SimGrid::default()
        };
        let trace = integrate_sfm(&params, &pump, &grid).unwrap();
        assert!(trace.px.iter().chain(&trace.py).all(|&v| v == 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let trace = PolarizedTrace {
            dt: 0.001,
            px: vec![0.0, 1.5, 2.25],
            py: vec![3.0, 0.125, 0.0],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"t_ns,px,py\n"));
        let back = PolarizedTrace::read_csv(&buf[..]).unwrap();
        assert_eq!(back.px, trace.px);
        assert_eq!(back.py, trace.py);
        assert!((back.dt - 0.001).abs() < 1e-15);
    }
}
