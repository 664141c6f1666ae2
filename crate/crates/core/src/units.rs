//! Scalar newtypes and physical constants.
//!
//! Energies are carried in meV, wavelengths in nm, temperatures in K,
//! rates in Hz and times in seconds throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planck constant times speed of light, meV·nm (CODATA 2018, exact).
pub const HC_MEV_NM: f64 = 1_239_841.984_332_002_5;
/// Boltzmann constant, meV/K (CODATA 2018, exact).
pub const KB_MEV_PER_K: f64 = 0.086_173_332_621_451_78;
/// ħ² / (1 amu · 1 Å²) expressed in meV (CODATA 2018).
///
/// Converts a mass-weighted displacement ΔQ in √amu·Å and a mode energy
/// ħω in meV into a dimensionless Huang–Rhys factor:
/// `S = ħω · ΔQ² / (2 · HBAR_SQ_OVER_AMU_A2_MEV)`.
pub const HBAR_SQ_OVER_AMU_A2_MEV: f64 = 4.180_159_279_778_998;
/// ħ·√(eV / (Å²·amu)) in meV: converts √(eigenvalue) of a dynamical
/// matrix built from eV/Å² springs and amu masses into a phonon energy.
pub const HBAR_OMEGA_UNIT_MEV: f64 = 64.654_151_295_790_73;

/// Zero-phonon line of the neutral charge state, nm.
pub const NV0_ZPL_NM: f64 = 575.0;
/// Zero-phonon line of the negative charge state, nm.
pub const NVM_ZPL_NM: f64 = 637.0;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnergyMeV(pub f64);

impl EnergyMeV {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct WavelengthNm(f64);

impl WavelengthNm {
    pub fn new(nm: f64) -> Result<Self> {
        if nm.is_finite() && nm > 0.0 {
            Ok(WavelengthNm(nm))
        } else {
            Err(Error::Domain(format!("wavelength must be positive and finite, got {nm} nm")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for WavelengthNm {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        WavelengthNm::new(v)
    }
}

impl From<WavelengthNm> for f64 {
    fn from(w: WavelengthNm) -> f64 {
        w.0
    }
}

/// Absolute temperature. `T = 0` is legal.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TemperatureK(f64);

impl TemperatureK {
    pub fn new(kelvin: f64) -> Result<Self> {
        if kelvin.is_finite() && kelvin >= 0.0 {
            Ok(TemperatureK(kelvin))
        } else {
            Err(Error::Domain(format!("temperature must be finite and >= 0, got {kelvin} K")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TemperatureK {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        TemperatureK::new(v)
    }
}

impl From<TemperatureK> for f64 {
    fn from(t: TemperatureK) -> f64 {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub hc_mev_nm: f64,
    pub kb_mev_per_k: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants::CODATA
    }
}

impl PhysicalConstants {
    pub const CODATA: PhysicalConstants = PhysicalConstants {
        hc_mev_nm: HC_MEV_NM,
        kb_mev_per_k: KB_MEV_PER_K,
    };

    /// Thermal energy k_B·T in meV.
    pub fn thermal_energy(&self, t: TemperatureK) -> f64 {
        self.kb_mev_per_k * t.value()
    }

    pub fn wavelength_to_energy(&self, lambda: WavelengthNm) -> EnergyMeV {
        EnergyMeV(self.hc_mev_nm / lambda.value())
    }

    pub fn energy_to_wavelength(&self, energy: EnergyMeV) -> Result<WavelengthNm> {
        if !(energy.0 > 0.0) {
            return Err(Error::Domain(format!("photon energy must be positive, got {} meV", energy.0)));
        }
        WavelengthNm::new(self.hc_mev_nm / energy.0)
    }

    /// `E_ZPL - E_λ`, the energy the lattice must supply to reach the ZPL.
    pub fn detuning_below_zpl(&self, lambda: WavelengthNm, zpl: WavelengthNm) -> Result<EnergyMeV> {
        if lambda.value() < zpl.value() {
            return Err(Error::Domain(format!(
                "super-resonant excitation out of scope: {} nm is shorter than the ZPL at {} nm",
                lambda.value(),
                zpl.value()
            )));
        }
        if lambda.value() == zpl.value() {
            return Ok(EnergyMeV(0.0));
        }
        let d = self.wavelength_to_energy(zpl).0 - self.wavelength_to_energy(lambda).0;
        Ok(EnergyMeV(d.max(0.0)))
    }
}

/// Photon energy for a vacuum wavelength, using CODATA constants.
pub fn wavelength_to_energy(lambda: WavelengthNm) -> EnergyMeV {
    PhysicalConstants::CODATA.wavelength_to_energy(lambda)
}

pub fn energy_to_wavelength(energy: EnergyMeV) -> Result<WavelengthNm> {
    PhysicalConstants::CODATA.energy_to_wavelength(energy)
}

pub fn detuning_below_zpl(lambda: WavelengthNm, zpl: WavelengthNm) -> Result<EnergyMeV> {
    PhysicalConstants::CODATA.detuning_below_zpl(lambda, zpl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nm(v: f64) -> WavelengthNm {
        WavelengthNm::new(v).unwrap()
    }

    #[test]
    fn photon_energies() {
        assert!((wavelength_to_energy(nm(575.0)).0 - 2156.25).abs() < 5e-3);
        assert!((wavelength_to_energy(nm(580.0)).0 - 2137.66).abs() < 5e-3);
    }

    #[test]
    fn non_positive_wavelength_rejected() {
        assert!(matches!(WavelengthNm::new(0.0), Err(Error::Domain(_))));
        assert!(matches!(WavelengthNm::new(-3.0), Err(Error::Domain(_))));
        assert!(WavelengthNm::new(f64::NAN).is_err());
        assert!(TemperatureK::new(-1.0).is_err());
        assert!(TemperatureK::new(0.0).is_ok());
    }

    #[test]
    fn detunings() {
        let zpl = nm(NV0_ZPL_NM);
        assert!((detuning_below_zpl(nm(580.0), zpl).unwrap().0 - 18.59).abs() < 5e-3);
        assert_eq!(detuning_below_zpl(nm(575.0), zpl).unwrap().0, 0.0);
        // 89.8436 exactly; 89.85 at the rounding of the photon energies
        assert!((detuning_below_zpl(nm(600.0), zpl).unwrap().0 - 89.85).abs() < 1e-2);
        assert!(matches!(detuning_below_zpl(nm(570.0), zpl), Err(Error::Domain(_))));
    }

    #[test]
    fn serde_rejects_bad_values() {
        assert!(serde_json::from_str::<WavelengthNm>("-1.0").is_err());
        assert_eq!(serde_json::from_str::<TemperatureK>("4.0").unwrap().value(), 4.0);
    }

    proptest! {
        #[test]
        fn energy_round_trip(l in 1.0f64..1e5) {
            let e = wavelength_to_energy(nm(l));
            let back = energy_to_wavelength(e).unwrap().value();
            prop_assert!(((back - l) / l).abs() < 1e-12);
        }

        #[test]
        fn strictly_decreasing(a in 100.0f64..2000.0, d in 1e-6f64..100.0) {
            prop_assert!(wavelength_to_energy(nm(a + d)).0 < wavelength_to_energy(nm(a)).0);
        }

        #[test]
        fn detuning_non_negative(zpl in 300.0f64..900.0, extra in prop_oneof![Just(0.0), 1e-6f64..100.0]) {
            let d = detuning_below_zpl(nm(zpl + extra), nm(zpl)).unwrap().0;
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d == 0.0, extra == 0.0);
        }
    }
}
