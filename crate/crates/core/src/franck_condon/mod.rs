//! Displaced harmonic oscillators: Franck–Condon overlaps and Huang–Rhys
//! factors.
//!
//! Ground and excited oscillators share one frequency and differ only by the
//! displacement ΔQ of their equilibria. The squared overlap between level
//! `n_g` and level `n_e` depends on the displacement only through the
//! Huang–Rhys factor `S = ω ΔQ² / 2ħ`:
//!
//! ```text
//! |<n_e|n_g>|² = e^{-S} n_g! n_e! ( Σ_l (-1)^l S^{(n_g+n_e)/2 - l} / (l! (n_g-l)! (n_e-l)!) )²
//! ```
//!
//! The sum is evaluated in log space with explicit sign tracking so that
//! quanta up to [`DEFAULT_QUANTA_CAP`] never overflow.

pub mod oracle;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{EnergyMeV, HBAR_SQ_OVER_AMU_A2_MEV};

pub use oracle::{numeric_overlap_oracle, QuadratureSpec};

/// Largest `n_g + n_e` accepted by [`fc_overlap_sq`].
pub const DEFAULT_QUANTA_CAP: u32 = 60;

const LN_FACT_TABLE: usize = 512;

fn ln_factorial(n: u32) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(LN_FACT_TABLE);
        let mut acc = 0.0_f64;
        t.push(0.0);
        for k in 1..LN_FACT_TABLE {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    });
    table[n as usize]
}

/// An effective vibrational mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PhononModeRepr", into = "PhononModeRepr")]
pub struct PhononMode {
    energy: EnergyMeV,
    huang_rhys: f64,
    label: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhononModeRepr {
    #[serde(default)]
    label: String,
    #[serde(rename = "energy_meV")]
    energy_mev: f64,
    huang_rhys: f64,
}

impl TryFrom<PhononModeRepr> for PhononMode {
    type Error = Error;
    fn try_from(r: PhononModeRepr) -> Result<Self> {
        PhononMode::new(r.label, EnergyMeV(r.energy_mev), r.huang_rhys)
    }
}

impl From<PhononMode> for PhononModeRepr {
    fn from(m: PhononMode) -> Self {
        PhononModeRepr {
            label: m.label,
            energy_mev: m.energy.0,
            huang_rhys: m.huang_rhys,
        }
    }
}

impl PhononMode {
    pub fn new(label: impl Into<String>, energy: EnergyMeV, huang_rhys: f64) -> Result<Self> {
        if !(energy.0.is_finite() && energy.0 > 0.0) {
            return Err(Error::Validation(format!("mode energy must be > 0 meV, got {}", energy.0)));
        }
        if !(huang_rhys.is_finite() && huang_rhys >= 0.0) {
            return Err(Error::Validation(format!("Huang-Rhys factor must be >= 0, got {huang_rhys}")));
        }
        Ok(PhononMode {
            energy,
            huang_rhys,
            label: label.into(),
        })
    }

    pub fn energy(&self) -> EnergyMeV {
        self.energy
    }

    pub fn huang_rhys(&self) -> f64 {
        self.huang_rhys
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_huang_rhys(&self, s: f64) -> Result<Self> {
        PhononMode::new(self.label.clone(), self.energy, s)
    }

    pub fn with_energy(&self, e: EnergyMeV) -> Result<Self> {
        PhononMode::new(self.label.clone(), e, self.huang_rhys)
    }
}

/// Vibrational level of a single oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OscillatorState {
    pub quanta: u32,
}

/// Squared Franck–Condon overlap `|<χ_{n_e}|χ_{n_g}>|²` with the default cap.
pub fn fc_overlap_sq(s: f64, n_g: u32, n_e: u32) -> Result<f64> {
    fc_overlap_sq_capped(s, n_g, n_e, DEFAULT_QUANTA_CAP)
}

pub fn fc_overlap_sq_capped(s: f64, n_g: u32, n_e: u32, cap: u32) -> Result<f64> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::Domain(format!("Huang-Rhys factor must be finite and >= 0, got {s}")));
    }
    let total = n_g as u64 + n_e as u64;
    if total > cap as u64 || total as usize >= LN_FACT_TABLE {
        return Err(Error::Capacity {
            what: format!("n_g + n_e = {total}"),
            limit: cap as usize,
            hint: "lower the per-mode quanta cap or raise the overlap cap".into(),
        });
    }
    // Symmetric in (n_g, n_e): fix the argument order so results agree bit-for-bit.
    let (a, b) = if n_g <= n_e { (n_g, n_e) } else { (n_e, n_g) };
    if s == 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }

    let ln_s = s.ln();
    let half_total = 0.5 * total as f64;
    let ln_prefactor = 0.5 * (ln_factorial(a) + ln_factorial(b));

    // Terms alternate in sign; gather log magnitudes, then sum relative to
    // the largest one.
    let mut logs = [0.0_f64; LN_FACT_TABLE / 2];
    let n_terms = a as usize + 1;
    let mut max_log = f64::NEG_INFINITY;
    for l in 0..=a {
        let lg = (half_total - l as f64) * ln_s + ln_prefactor
            - ln_factorial(l)
            - ln_factorial(a - l)
            - ln_factorial(b - l);
        logs[l as usize] = lg;
        max_log = max_log.max(lg);
    }
    let mut sum = 0.0_f64;
    for (l, lg) in logs[..n_terms].iter().enumerate() {
        let mag = (lg - max_log).exp();
        if l % 2 == 0 {
            sum += mag;
        } else {
            sum -= mag;
        }
    }
    if sum == 0.0 {
        return Ok(0.0);
    }
    let value = (-s + 2.0 * max_log + 2.0 * sum.abs().ln()).exp();
    Ok(value.min(1.0))
}

/// Per-mode table of `fc_overlap_sq(S, n_g, n_e)` for `n_g, n_e <= max_quanta`.
#[derive(Debug, Clone)]
pub struct OverlapTable {
    n: usize,
    values: Vec<f64>,
}

impl OverlapTable {
    pub fn new(s: f64, max_quanta: u32) -> Result<Self> {
        let n = max_quanta as usize + 1;
        let mut values = vec![0.0; n * n];
        for g in 0..n {
            for e in g..n {
                let v = fc_overlap_sq_capped(s, g as u32, e as u32, (2 * max_quanta).max(DEFAULT_QUANTA_CAP))?;
                values[g * n + e] = v;
                values[e * n + g] = v;
            }
        }
        Ok(OverlapTable { n, values })
    }

    #[inline]
    pub fn get(&self, n_g: usize, n_e: usize) -> f64 {
        self.values[n_g * self.n + n_e]
    }
}

/// Huang–Rhys factor `S = ω ΔQ² / 2ħ` from a mode energy `ħω` and a
/// mass-weighted displacement `ΔQ` in √amu·Å.
///
/// With `ħω` in meV and `ΔQ²` in amu·Å², `S = ħω ΔQ² / (2 ħ²/(amu·Å²))`
/// where `ħ²/(amu·Å²) =` [`HBAR_SQ_OVER_AMU_A2_MEV`] meV.
pub fn huang_rhys_from_displacement(omega: EnergyMeV, delta_q: f64) -> Result<f64> {
    if !(omega.0.is_finite() && omega.0 > 0.0) {
        return Err(Error::Domain(format!("mode energy must be > 0, got {} meV", omega.0)));
    }
    Ok(omega.0 * delta_q * delta_q / (2.0 * HBAR_SQ_OVER_AMU_A2_MEV))
}

/// Inverse of [`huang_rhys_from_displacement`]; returns the non-negative root.
pub fn displacement_from_huang_rhys(omega: EnergyMeV, s: f64) -> Result<f64> {
    if !(omega.0.is_finite() && omega.0 > 0.0) {
        return Err(Error::Domain(format!("mode energy must be > 0, got {} meV", omega.0)));
    }
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::Domain(format!("Huang-Rhys factor must be >= 0, got {s}")));
    }
    Ok((2.0 * HBAR_SQ_OVER_AMU_A2_MEV * s / omega.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ln_fact_naive(n: u32) -> f64 {
        (1..=n).map(|k| (k as f64).ln()).sum()
    }

    fn poisson(s: f64, n: u32) -> f64 {
        (-s + n as f64 * s.ln() - ln_fact_naive(n)).exp()
    }

    #[test]
    fn ground_to_ground() {
        let v = fc_overlap_sq(0.7, 0, 0).unwrap();
        assert!((v - 0.496_585_303_791_409_5).abs() < 1e-14);
    }

    #[test]
    fn undisplaced_is_orthonormal() {
        assert_eq!(fc_overlap_sq(0.0, 2, 2).unwrap(), 1.0);
        assert_eq!(fc_overlap_sq(0.0, 1, 2).unwrap(), 0.0);
        assert_eq!(fc_overlap_sq(0.0, 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn one_to_one() {
        // e^{-S}(S-1)^2 at S = 0.5
        let v = fc_overlap_sq(0.5, 1, 1).unwrap();
        assert!((v - 0.151_632_664_928_158_36).abs() < 1e-14);
        let oracle = numeric_overlap_oracle(0.5, 1, 1, &QuadratureSpec::default()).unwrap();
        assert!((v - oracle).abs() < 1e-10);
    }

    #[test]
    fn zero_where_overlap_vanishes() {
        // S = 1: <1|1> amplitude ∝ (S - 1) = 0
        assert!(fc_overlap_sq(1.0, 1, 1).unwrap() < 1e-30);
    }

    #[test]
    fn errors() {
        assert!(matches!(fc_overlap_sq(-0.1, 0, 0), Err(Error::Domain(_))));
        assert!(matches!(fc_overlap_sq(f64::NAN, 0, 0), Err(Error::Domain(_))));
        assert!(matches!(fc_overlap_sq(1.0, 40, 21), Err(Error::Capacity { .. })));
        assert!(fc_overlap_sq(1.0, 30, 30).is_ok());
        assert!(fc_overlap_sq_capped(1.0, 3, 3, 5).is_err());
    }

    #[test]
    fn completeness_residue() {
        for n_g in 0..=3u32 {
            for &s in &[0.1, 0.7, 1.3, 2.0] {
                let total: f64 = (0..=n_g + 40).map(|n_e| fc_overlap_sq(s, n_g, n_e).unwrap()).sum();
                assert!((1.0 - total).abs() < 1e-6, "n_g={n_g} S={s} sum={total}");
            }
        }
    }

    #[test]
    fn huang_rhys_displacement() {
        let w = EnergyMeV(43.0);
        assert_eq!(huang_rhys_from_displacement(w, 0.0).unwrap(), 0.0);
        let s1 = huang_rhys_from_displacement(w, 0.3).unwrap();
        let s2 = huang_rhys_from_displacement(w, 0.6).unwrap();
        assert!((s2 / s1 - 4.0).abs() < 1e-12);
        let dq = displacement_from_huang_rhys(w, 1.0).unwrap();
        assert!((huang_rhys_from_displacement(w, dq).unwrap() - 1.0).abs() < 1e-12);
        // ΔQ for S = 1 at 43 meV: sqrt(2 * 4.180159 / 43)
        assert!((dq - 0.440_937_652_069_968_5).abs() < 1e-12);
        assert!(huang_rhys_from_displacement(EnergyMeV(0.0), 1.0).is_err());
        assert!(huang_rhys_from_displacement(EnergyMeV(-5.0), 1.0).is_err());
    }

    #[test]
    fn table_matches_direct() {
        let t = OverlapTable::new(0.8, 12).unwrap();
        for g in 0..=12 {
            for e in 0..=12 {
                assert_eq!(t.get(g, e), fc_overlap_sq(0.8, g as u32, e as u32).unwrap());
            }
        }
    }

    #[test]
    fn phonon_mode_validation() {
        assert!(PhononMode::new("a", EnergyMeV(0.0), 0.1).is_err());
        assert!(PhononMode::new("a", EnergyMeV(9.0), -0.1).is_err());
        let m = PhononMode::new("acoustic", EnergyMeV(9.0), 0.5).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"label":"acoustic","energy_meV":9.0,"huang_rhys":0.5}"#);
        assert!(serde_json::from_str::<PhononMode>(r#"{"energy_meV":9.0,"huang_rhys":-1}"#).is_err());
    }

    proptest! {
        #[test]
        fn symmetric(s in 0.0f64..5.0, a in 0u32..30, b in 0u32..30) {
            prop_assert_eq!(fc_overlap_sq(s, a, b).unwrap(), fc_overlap_sq(s, b, a).unwrap());
        }

        #[test]
        fn poisson_progression(s in 1e-3f64..5.0, n in 0u32..40) {
            let v = fc_overlap_sq(s, 0, n).unwrap();
            let p = poisson(s, n);
            prop_assert!(((v - p) / p).abs() < 1e-12, "{} vs {}", v, p);
        }

        #[test]
        fn bounded(s in 0.0f64..10.0, a in 0u32..30, b in 0u32..30) {
            let v = fc_overlap_sq(s, a, b).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
