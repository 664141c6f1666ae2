//! Effective-mode transition rate.
//!
//! A handful of Lorentzian-broadened oscillators stand in for the lattice.
//! The power-normalised rate is
//!
//! ```text
//! R/P = C Σ_{n_g} Σ_{n_e} exp(-Σ_k n_g^k ħω_k / k_B T)
//!         · L(E_ZPL + Σ_k ħω_k (n_e^k - n_g^k) - E_λ, Γ)
//!         · Π_k |<χ_{n_e^k}|χ_{n_g^k}>|²
//! ```
//!
//! with `L(E, Γ) = 1 / (1 + (2E/Γ)²)`. The lineshape is truncated to zero
//! beyond `lorentzian_window_halfwidths · Γ/2`, initial states are dropped
//! once their Boltzmann weight falls below `boltzmann_cutoff`, and final
//! states are enumerated only inside the resonance window of each initial
//! state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::franck_condon::{OverlapTable, PhononMode};
use crate::units::{EnergyMeV, PhysicalConstants, TemperatureK, WavelengthNm};

pub const MAX_MODES: usize = 4;

/// Upper bound on the size of the initial-state lattice `Π (cap + 1)`.
pub const MAX_INITIAL_CONFIGURATIONS: u64 = 20_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModeSetRepr", into = "ModeSetRepr")]
pub struct ModeSet {
    modes: Vec<PhononMode>,
    fwhm: EnergyMeV,
    scale: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeSetRepr {
    #[serde(default = "modeset_schema")]
    schema: String,
    modes: Vec<PhononMode>,
    #[serde(rename = "lorentzian_fwhm_meV")]
    lorentzian_fwhm_mev: f64,
    scale: f64,
}

fn modeset_schema() -> String {
    ModeSet::SCHEMA.to_string()
}

impl TryFrom<ModeSetRepr> for ModeSet {
    type Error = Error;
    fn try_from(r: ModeSetRepr) -> Result<Self> {
        if r.schema != ModeSet::SCHEMA {
            return Err(Error::Validation(format!(
                "unsupported mode-set schema '{}', expected '{}'",
                r.schema,
                ModeSet::SCHEMA
            )));
        }
        ModeSet::new(r.modes, EnergyMeV(r.lorentzian_fwhm_mev), r.scale)
    }
}

impl From<ModeSet> for ModeSetRepr {
    fn from(m: ModeSet) -> Self {
        ModeSetRepr {
            schema: ModeSet::SCHEMA.into(),
            modes: m.modes,
            lorentzian_fwhm_mev: m.fwhm.0,
            scale: m.scale,
        }
    }
}

impl ModeSet {
    pub const SCHEMA: &'static str = "modeset/v1";

    pub fn new(modes: Vec<PhononMode>, fwhm: EnergyMeV, scale: f64) -> Result<Self> {
        if modes.is_empty() || modes.len() > MAX_MODES {
            return Err(Error::Validation(format!(
                "mode set needs 1..={MAX_MODES} modes, got {}",
                modes.len()
            )));
        }
        if !(fwhm.0.is_finite() && fwhm.0 > 0.0) {
            return Err(Error::Validation(format!("Lorentzian FWHM must be > 0, got {} meV", fwhm.0)));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Validation(format!("scale must be > 0, got {scale}")));
        }
        Ok(ModeSet { modes, fwhm, scale })
    }

    pub fn modes(&self) -> &[PhononMode] {
        &self.modes
    }

    pub fn lorentzian_fwhm(&self) -> EnergyMeV {
        self.fwhm
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        ModeSet::new(self.modes.clone(), self.fwhm, scale)
    }
}

/// Vibrational occupation of every mode in a [`ModeSet`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OccupationVector(pub Vec<u32>);

impl OccupationVector {
    pub fn zeros(n: usize) -> Self {
        OccupationVector(vec![0; n])
    }

    pub fn energy(&self, modes: &ModeSet) -> Result<f64> {
        if self.0.len() != modes.modes.len() {
            return Err(Error::Validation(format!(
                "occupation vector has {} entries for {} modes",
                self.0.len(),
                modes.modes.len()
            )));
        }
        Ok(self
            .0
            .iter()
            .zip(&modes.modes)
            .map(|(&n, m)| n as f64 * m.energy().0)
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnumerationLimits {
    pub max_quanta_per_mode: u32,
    /// Initial states are skipped once their weight falls below this fraction
    /// of the lightest state that can reach the resonance window (the ground
    /// state unless the detuning exceeds the window).
    pub boltzmann_cutoff: f64,
    /// Half-width of the resonance window in units of Γ/2.
    pub lorentzian_window_halfwidths: f64,
}

impl Default for EnumerationLimits {
    fn default() -> Self {
        EnumerationLimits {
            max_quanta_per_mode: 12,
            boltzmann_cutoff: 1e-9,
            lorentzian_window_halfwidths: 40.0,
        }
    }
}

impl EnumerationLimits {
    pub fn validate(&self) -> Result<()> {
        if self.max_quanta_per_mode == 0 {
            return Err(Error::Validation("max_quanta_per_mode must be positive".into()));
        }
        if !(self.boltzmann_cutoff > 0.0 && self.boltzmann_cutoff < 1.0) {
            return Err(Error::Validation(format!(
                "boltzmann_cutoff must lie in (0, 1), got {}",
                self.boltzmann_cutoff
            )));
        }
        if !(self.lorentzian_window_halfwidths > 0.0) {
            return Err(Error::Validation(format!(
                "lorentzian_window_halfwidths must be positive, got {}",
                self.lorentzian_window_halfwidths
            )));
        }
        Ok(())
    }
}

/// Unnormalized Boltzmann weight `exp(-Σ n_k ħω_k / k_B T)`.
///
/// At `T = 0` the ground configuration has weight 1 and every other 0.
pub fn boltzmann_weight(n_g: &OccupationVector, modes: &ModeSet, t: TemperatureK) -> Result<f64> {
    let e = n_g.energy(modes)?;
    Ok(boltzmann_factor(e, PhysicalConstants::CODATA.thermal_energy(t)))
}

#[inline]
fn boltzmann_factor(energy: f64, kt: f64) -> f64 {
    if energy == 0.0 {
        1.0
    } else if kt == 0.0 {
        0.0
    } else {
        (-energy / kt).exp()
    }
}

/// Unit-peak Lorentzian with full width at half maximum `fwhm`.
pub fn lorentzian(e: EnergyMeV, fwhm: EnergyMeV) -> Result<f64> {
    if !(fwhm.0.is_finite() && fwhm.0 > 0.0) {
        return Err(Error::Domain(format!("Lorentzian FWHM must be > 0, got {} meV", fwhm.0)));
    }
    Ok(lorentzian_unchecked(e.0, fwhm.0))
}

#[inline]
fn lorentzian_unchecked(e: f64, fwhm: f64) -> f64 {
    let x = e / (0.5 * fwhm);
    1.0 / (1.0 + x * x)
}

/// Reusable evaluator holding per-mode overlap tables.
#[derive(Debug, Clone)]
pub struct EffectiveModeModel {
    modes: ModeSet,
    limits: EnumerationLimits,
    energies: Vec<f64>,
    tables: Vec<OverlapTable>,
    constants: PhysicalConstants,
}

impl EffectiveModeModel {
    pub fn new(modes: &ModeSet, limits: EnumerationLimits) -> Result<Self> {
        limits.validate()?;
        let k = modes.modes.len() as u32;
        let per_mode = limits.max_quanta_per_mode as u64 + 1;
        let configurations = per_mode.checked_pow(k).unwrap_or(u64::MAX);
        if configurations > MAX_INITIAL_CONFIGURATIONS {
            let suggested = (MAX_INITIAL_CONFIGURATIONS as f64).powf(1.0 / k as f64).floor() as u64 - 1;
            return Err(Error::Capacity {
                what: format!("{} modes x {} quanta per mode", k, limits.max_quanta_per_mode),
                limit: MAX_INITIAL_CONFIGURATIONS as usize,
                hint: format!("use max_quanta_per_mode <= {suggested} for {k} modes"),
            });
        }
        let tables = modes
            .modes
            .iter()
            .map(|m| OverlapTable::new(m.huang_rhys(), limits.max_quanta_per_mode))
            .collect::<Result<Vec<_>>>()?;
        Ok(EffectiveModeModel {
            energies: modes.modes.iter().map(|m| m.energy().0).collect(),
            modes: modes.clone(),
            limits,
            tables,
            constants: PhysicalConstants::CODATA,
        })
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn limits(&self) -> &EnumerationLimits {
        &self.limits
    }

    /// Rate per unit power density at detuning `E_ZPL - E_λ`.
    pub fn rate_at_detuning(&self, detuning: f64, t: TemperatureK) -> f64 {
        let kt = self.constants.thermal_energy(t);
        let fwhm = self.modes.fwhm.0;
        let window = self.limits.lorentzian_window_halfwidths * 0.5 * fwhm;
        let cap = self.limits.max_quanta_per_mode;
        let n_modes = self.energies.len();

        // Initial states lighter than `detuning - window` cannot reach the
        // window at all, so the cutoff is measured from the lightest one that can.
        let e_ref = (detuning - window).max(0.0);
        let e_cut = if kt == 0.0 { 0.0 } else { e_ref - kt * self.limits.boltzmann_cutoff.ln() };
        let mut initial = Vec::new();
        collect_bounded(&self.energies, cap, 0, &mut vec![0; n_modes], 0.0, f64::NEG_INFINITY, e_cut, &mut initial);
        // Increasing Boltzmann energy; ties broken by the occupation vector.
        initial.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

        let mut max_remaining = vec![0.0; n_modes + 1];
        for k in (0..n_modes).rev() {
            max_remaining[k] = max_remaining[k + 1] + cap as f64 * self.energies[k];
        }

        let mut total = 0.0;
        let mut final_state = vec![0u32; n_modes];
        for (e_g, n_g) in &initial {
            let weight = boltzmann_factor(*e_g, kt);
            if *e_g > e_ref && boltzmann_factor(e_g - e_ref, kt) < self.limits.boltzmann_cutoff {
                break;
            }
            // |detuning + E_e - E_g| <= window
            let lo = e_g - detuning - window;
            let hi = e_g - detuning + window;
            if hi < 0.0 {
                continue;
            }
            let mut acc = 0.0;
            let ctx = BandContext {
                energies: &self.energies,
                tables: &self.tables,
                max_remaining: &max_remaining,
                n_g,
                cap,
                lo,
                hi,
                offset: detuning - e_g,
                fwhm,
                window,
            };
            ctx.visit(0, &mut final_state, 0.0, 1.0, &mut acc);
            total += weight * acc;
        }
        self.modes.scale * total
    }

    pub fn rate_per_power(&self, lambda: WavelengthNm, t: TemperatureK, zpl: WavelengthNm) -> Result<f64> {
        let detuning = self.constants.detuning_below_zpl(lambda, zpl)?;
        Ok(self.rate_at_detuning(detuning.0, t))
    }

    /// Evaluates every `(λ, T)` pair; row-major in `lambdas`, then `temps`.
    pub fn rate_grid(
        &self,
        lambdas: &[WavelengthNm],
        temps: &[TemperatureK],
        zpl: WavelengthNm,
    ) -> Result<Vec<(WavelengthNm, TemperatureK, f64)>> {
        let points: Vec<(WavelengthNm, TemperatureK)> = temps
            .iter()
            .flat_map(|&t| lambdas.iter().map(move |&l| (l, t)))
            .collect();
        points
            .par_iter()
            .map(|&(l, t)| self.rate_per_power(l, t, zpl).map(|r| (l, t, r)))
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn collect_bounded(
    energies: &[f64],
    cap: u32,
    k: usize,
    current: &mut Vec<u32>,
    partial: f64,
    lo: f64,
    hi: f64,
    out: &mut Vec<(f64, Vec<u32>)>,
) {
    if k == energies.len() {
        if partial >= lo {
            out.push((partial, current.clone()));
        }
        return;
    }
    for n in 0..=cap {
        let e = partial + n as f64 * energies[k];
        if e > hi {
            break;
        }
        current[k] = n;
        collect_bounded(energies, cap, k + 1, current, e, lo, hi, out);
    }
    current[k] = 0;
}

struct BandContext<'a> {
    energies: &'a [f64],
    tables: &'a [OverlapTable],
    max_remaining: &'a [f64],
    n_g: &'a [u32],
    cap: u32,
    lo: f64,
    hi: f64,
    /// detuning - E_g; the resonance mismatch is offset + E_e.
    offset: f64,
    fwhm: f64,
    window: f64,
}

impl BandContext<'_> {
    fn visit(&self, k: usize, n_e: &mut [u32], partial: f64, fc: f64, acc: &mut f64) {
        if k == self.energies.len() {
            let mismatch = self.offset + partial;
            if mismatch.abs() <= self.window {
                *acc += fc * lorentzian_unchecked(mismatch, self.fwhm);
            }
            return;
        }
        let g = self.n_g[k] as usize;
        for n in 0..=self.cap {
            let e = partial + n as f64 * self.energies[k];
            if e > self.hi {
                break;
            }
            if e + self.max_remaining[k + 1] < self.lo {
                continue;
            }
            n_e[k] = n;
            let f = fc * self.tables[k].get(g, n as usize);
            self.visit(k + 1, n_e, e, f, acc);
        }
        n_e[k] = 0;
    }
}

/// One-shot evaluation of the effective-mode rate per unit power density.
pub fn rate_per_power(
    lambda: WavelengthNm,
    t: TemperatureK,
    modes: &ModeSet,
    zpl: WavelengthNm,
    limits: &EnumerationLimits,
) -> Result<f64> {
    EffectiveModeModel::new(modes, *limits)?.rate_per_power(lambda, t, zpl)
}

/// Electron–phonon coupling spectrum `S(ħω) = Σ_k L(ħω_k - ħω, Γ) S_k`.
pub fn coupling_spectrum(modes: &ModeSet, grid: &[EnergyMeV]) -> Vec<(EnergyMeV, f64)> {
    grid.iter()
        .map(|&w| {
            let s = modes
                .modes
                .iter()
                .map(|m| lorentzian_unchecked(m.energy().0 - w.0, modes.fwhm.0) * m.huang_rhys())
                .sum();
            (w, s)
        })
        .collect()
}
