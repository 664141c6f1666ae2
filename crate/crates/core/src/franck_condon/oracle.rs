//! Numeric Franck–Condon overlaps from explicit Hermite-function
//! wavefunctions, used to cross-check the closed form.
//!
//! Works in the dimensionless coordinate `x = √(ω/ħ) Q`, where level `n` is
//! `(2ⁿ n! √π)^{-1/2} e^{-x²/2} H_n(x)` and the ground-state oscillator is
//! centred at `d = √(2S)`.

use crate::error::{Error, Result};

/// Largest quantum number accepted by the oracle.
pub const ORACLE_MAX_QUANTA: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Absolute tolerance on the overlap amplitude.
    pub abs_tol: f64,
    /// Uniform panels before adaptive refinement starts.
    pub initial_panels: usize,
    pub max_depth: u32,
    /// Widths added beyond the outermost classical turning point.
    pub extra_widths: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            abs_tol: 1e-13,
            initial_panels: 64,
            max_depth: 40,
            extra_widths: 8.0,
        }
    }
}

/// Physicists' Hermite polynomial `H_n(x)` by upward recurrence.
pub fn hermite(n: u32, x: f64) -> f64 {
    let mut h_prev = 1.0;
    if n == 0 {
        return h_prev;
    }
    let mut h = 2.0 * x;
    for k in 1..n {
        let next = 2.0 * x * h - 2.0 * k as f64 * h_prev;
        h_prev = h;
        h = next;
    }
    h
}

/// Normalized harmonic-oscillator eigenfunction in dimensionless units.
pub fn oscillator_wavefunction(n: u32, x: f64) -> f64 {
    let factorial: f64 = (1..=n).map(f64::from).product();
    let norm = 1.0 / (2f64.powi(n as i32) * factorial * std::f64::consts::PI.sqrt()).sqrt();
    norm * (-0.5 * x * x).exp() * hermite(n, x)
}

/// `|∫ χ_{n_e}(x) χ_{n_g}(x - d) dx|²` with `d = √(2S)`.
pub fn numeric_overlap_oracle(s: f64, n_g: u32, n_e: u32, spec: &QuadratureSpec) -> Result<f64> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::Domain(format!("Huang-Rhys factor must be >= 0, got {s}")));
    }
    if n_g > ORACLE_MAX_QUANTA || n_e > ORACLE_MAX_QUANTA {
        return Err(Error::Domain(format!(
            "oracle supports quanta <= {ORACLE_MAX_QUANTA}, got ({n_g}, {n_e})"
        )));
    }
    let d = (2.0 * s).sqrt();
    let turning = (2.0 * n_g.max(n_e) as f64 + 1.0).sqrt();
    let half = d + turning + spec.extra_widths;
    let f = |x: f64| oscillator_wavefunction(n_e, x) * oscillator_wavefunction(n_g, x - d);
    let amplitude = adaptive_simpson(f, -half, half, spec)?;
    Ok(amplitude * amplitude)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64> {
    let panels = spec.initial_panels.max(1);
    let h = (b - a) / panels as f64;
    let tol = spec.abs_tol / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let lo = a + i as f64 * h;
        let hi = if i + 1 == panels { b } else { lo + h };
        let (flo, fmid, fhi) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        total += simpson_step(&f, lo, hi, flo, fmid, fhi, whole, tol, spec.max_depth)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Numeric(format!(
            "adaptive Simpson did not converge on [{a:.6}, {b:.6}]: error estimate {:.3e} > tolerance {:.3e}",
            delta.abs() / 15.0,
            tol
        )));
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}
