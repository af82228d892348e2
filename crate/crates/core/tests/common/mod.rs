#![allow(dead_code)]

use num_complex::Complex64;
use vcsel_qrng::laser::{SfmIntegrator, SfmState, VcselParams};

/// Noise-free parameters with the compression and dichroism knobs set.
pub fn quiet(gamma_a: f64, eps_self: f64) -> VcselParams {
    VcselParams {
        beta_sp: 0.0,
        gamma_a,
        eps_self,
        ..VcselParams::default()
    }
}

/// Equal circular components: a purely x-polarized field with zero spin,
/// which the equations keep exactly symmetric.
pub fn x_polarized(carriers: f64, amplitude: f64) -> SfmState {
    SfmState {
        e_plus: Complex64::new(amplitude, 0.0),
        e_minus: Complex64::new(amplitude, 0.0),
        carriers,
        spin: 0.0,
    }
}

/// Lasing fixed point of the x-polarized mode at constant pump `mu`,
/// found by bisection on the net gain
/// `kappa (mu / (1 + I) - 1) - gamma_a - kappa eps_self I = 0`,
/// with `N = mu / (1 + I)`. Returns `(I, N)`.
pub fn steady_state(p: &VcselParams, mu: f64) -> (f64, f64) {
    let f = |i: f64| p.kappa * (mu / (1.0 + i) - 1.0) - p.gamma_a - p.kappa * p.eps_self * i;
    let (mut lo, mut hi) = (0.0, mu);
    assert!(f(lo) > 0.0 && f(hi) < 0.0, "pump below threshold");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let i = 0.5 * (lo + hi);
    (i, mu / (1.0 + i))
}

/// Integrate at constant pump without noise for `t_end` ns.
pub fn settle(p: &VcselParams, mu: f64, dt: f64, t_end: f64, init: SfmState) -> SfmState {
    let mut it = SfmIntegrator::new(*p, dt, init);
    for _ in 0..(t_end / dt).round() as usize {
        it.step(mu, None).unwrap();
    }
    *it.state()
}

/// A generic start: some field in both circular components, carriers low.
pub fn perturbed() -> SfmState {
    SfmState {
        e_plus: Complex64::new(0.1, 0.0),
        e_minus: Complex64::new(0.06, 0.03),
        carriers: 0.3,
        spin: 0.0,
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
