//! Quasi-continuum transition rate from an emission spectral density.
//!
//! The ground-state vibrational manifold is treated as a continuum in the
//! phonon energy `ε`, and the final state is the vibrationless excited level.
//! The rate per unit power density is then
//!
//! ```text
//! R/P = C ∫_{E_ZPL - E_λ}^{E_ZPL} e^{-ε/k_B T} A_em(ε) dε
//! ```
//!
//! where `A_em` is the emission sideband expressed against detuning from the
//! ZPL. Sampled spectra are linearly interpolated between samples and the
//! product with the Boltzmann factor is integrated exactly on each interval,
//! which reduces to the trapezoidal rule when the sample spacing is small
//! against `k_B T`.

use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rate_curve::{RateCurve, RatePoint};
use crate::units::{PhysicalConstants, TemperatureK, WavelengthNm};

/// Sampled emission spectral density against detuning below the ZPL (meV).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionSpectrum {
    detunings: Vec<f64>,
    densities: Vec<f64>,
    source_label: String,
}

impl EmissionSpectrum {
    pub fn new(samples: Vec<(f64, f64)>, source_label: impl Into<String>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Validation(format!("spectrum needs at least 2 samples, got {}", samples.len())));
        }
        let mut detunings = Vec::with_capacity(samples.len());
        let mut densities = Vec::with_capacity(samples.len());
        for (i, &(e, a)) in samples.iter().enumerate() {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::Validation(format!("sample {i}: detuning must be finite and >= 0, got {e}")));
            }
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::Validation(format!("sample {i}: negative or non-finite density {a}")));
            }
            if let Some(&prev) = detunings.last() {
                if e <= prev {
                    return Err(Error::Validation(format!(
                        "sample {i}: non-increasing abscissa ({e} after {prev} meV)"
                    )));
                }
            }
            detunings.push(e);
            densities.push(a);
        }
        Ok(EmissionSpectrum {
            detunings,
            densities,
            source_label: source_label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.detunings.iter().copied().zip(self.densities.iter().copied())
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    /// Linear interpolation; zero outside the sampled range.
    pub fn density_at(&self, eps: f64) -> f64 {
        let x = &self.detunings;
        if eps < x[0] || eps > x[x.len() - 1] {
            return 0.0;
        }
        let i = x.partition_point(|&v| v <= eps);
        if i == 0 {
            return self.densities[0];
        }
        if i == x.len() {
            return self.densities[x.len() - 1];
        }
        let (x0, x1) = (x[i - 1], x[i]);
        let (a0, a1) = (self.densities[i - 1], self.densities[i]);
        a0 + (a1 - a0) * (eps - x0) / (x1 - x0)
    }

    /// Resample onto a uniform grid of the given step spanning the same range.
    pub fn resample(&self, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Domain(format!("resampling step must be > 0, got {step}")));
        }
        let (lo, hi) = (self.detunings[0], self.detunings[self.len() - 1]);
        let n = ((hi - lo) / step).ceil() as usize;
        let samples = (0..=n)
            .map(|i| {
                let e = if i == n { hi } else { lo + i as f64 * step };
                (e, self.density_at(e))
            })
            .collect();
        EmissionSpectrum::new(samples, self.source_label.clone())
    }

    /// `Σ (α A_i)` for spectra sharing a grid; used to form mixtures.
    pub fn combine(&self, alpha: f64, other: &EmissionSpectrum, beta: f64) -> Result<Self> {
        if self.detunings != other.detunings {
            return Err(Error::Validation("spectra must share a sample grid to be combined".into()));
        }
        let samples = self
            .samples()
            .zip(other.densities.iter())
            .map(|((e, a), b)| (e, alpha * a + beta * b))
            .collect();
        EmissionSpectrum::new(samples, format!("{}+{}", self.source_label, other.source_label))
    }

    /// `∫_{lo}^{hi} e^{-ε/kT} A(ε) dε` over the linear interpolant.
    pub fn boltzmann_integral(&self, lo: f64, hi: f64, kt: f64) -> f64 {
        let x = &self.detunings;
        let a = &self.densities;
        let lo = lo.max(x[0]);
        let hi = hi.min(x[x.len() - 1]);
        if !(hi > lo) {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..x.len() - 1 {
            let (x0, x1) = (x[i], x[i + 1]);
            if x1 <= lo {
                continue;
            }
            if x0 >= hi {
                break;
            }
            let (s0, s1) = (x0.max(lo), x1.min(hi));
            let slope = (a[i + 1] - a[i]) / (x1 - x0);
            let (d0, d1) = (a[i] + slope * (s0 - x0), a[i] + slope * (s1 - x0));
            total += linear_times_exponential(s0, s1, d0, d1, kt);
        }
        total
    }
}

/// `∫_{x0}^{x1} e^{-ε/kT} (linear from a0 to a1) dε`, stable for any `kT > 0`
/// including `kT = ∞` (trapezoid).
fn linear_times_exponential(x0: f64, x1: f64, a0: f64, a1: f64, kt: f64) -> f64 {
    let h = x1 - x0;
    let r = if kt.is_infinite() { 0.0 } else { h / kt };
    // ∫_0^1 e^{-r u} (1-u) du and ∫_0^1 e^{-r u} u du
    let (w0, w1) = if r < 0.05 {
        let mut w0 = 0.0;
        let mut w1 = 0.0;
        let mut term = 1.0; // (-r)^k / k!
        for k in 0..12 {
            let kf = k as f64;
            w0 += term / ((kf + 1.0) * (kf + 2.0));
            w1 += term / (kf + 2.0);
            term *= -r / (kf + 1.0);
        }
        (w0, w1)
    } else {
        let e = (-r).exp();
        ((r - 1.0 + e) / (r * r), (1.0 - (1.0 + r) * e) / (r * r))
    };
    let base = if kt.is_infinite() { 1.0 } else { (-x0 / kt).exp() };
    base * h * (a0 * w0 + a1 * w1)
}

/// Abscissa convention of a spectrum file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "abscissa")]
pub enum SpectrumFormat {
    /// Header `epsilon_meV,density`; detuning below the ZPL.
    Detuning,
    /// Header `photon_energy_meV,density`; converted with `ε = E_ZPL - E`.
    /// Samples above the ZPL are discarded.
    PhotonEnergy { zpl: WavelengthNm },
}

pub const DETUNING_HEADER: [&str; 2] = ["epsilon_meV", "density"];
pub const PHOTON_ENERGY_HEADER: [&str; 2] = ["photon_energy_meV", "density"];

pub fn read_spectrum<R: Read>(input: R, format: SpectrumFormat, source_label: &str) -> Result<EmissionSpectrum> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let expected = match format {
        SpectrumFormat::Detuning => DETUNING_HEADER,
        SpectrumFormat::PhotonEnergy { .. } => PHOTON_ENERGY_HEADER,
    };
    let headers = rdr.headers().map_err(Error::from_csv)?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: headers.position().map(|p| p.line()).unwrap_or(1),
            message: format!("expected header '{}'", expected.join(",")),
        });
    }
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(Error::from_csv)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parse = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("column '{}': {e}", expected[i]),
            })
        };
        let (x, a) = (parse(0)?, parse(1)?);
        if !(a >= 0.0) {
            return Err(Error::Validation(format!("line {line}: negative density {a}")));
        }
        samples.push((x, a, line));
    }
    let pairs: Vec<(f64, f64)> = match format {
        SpectrumFormat::Detuning => samples.iter().map(|&(x, a, _)| (x, a)).collect(),
        SpectrumFormat::PhotonEnergy { zpl } => {
            let e_zpl = PhysicalConstants::CODATA.wavelength_to_energy(zpl).0;
            let mut v: Vec<(f64, f64)> = samples
                .iter()
                .map(|&(x, a, _)| (e_zpl - x, a))
                .filter(|&(eps, _)| eps >= 0.0)
                .collect();
            v.reverse();
            v
        }
    };
    EmissionSpectrum::new(pairs, source_label)
}

pub fn load_spectrum(path: &Path, format: SpectrumFormat) -> Result<EmissionSpectrum> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("spectrum");
    read_spectrum(std::io::BufReader::new(f), format, label)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiContinuumParams {
    /// Merged prefactor `C·|μ|²`.
    pub scale: f64,
    pub zpl: WavelengthNm,
}

impl QuasiContinuumParams {
    pub fn new(scale: f64, zpl: WavelengthNm) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Validation(format!("scale must be > 0, got {scale}")));
        }
        Ok(QuasiContinuumParams { scale, zpl })
    }
}

/// Rate per unit power density at wavelength `λ` and temperature `T`.
pub fn qc_rate_per_power(
    lambda: WavelengthNm,
    t: TemperatureK,
    spec: &EmissionSpectrum,
    params: &QuasiContinuumParams,
) -> Result<f64> {
    let c = PhysicalConstants::CODATA;
    let detuning = c.detuning_below_zpl(lambda, params.zpl)?.0;
    let kt = c.thermal_energy(t);
    if kt == 0.0 {
        return Ok(0.0);
    }
    let e_zpl = c.wavelength_to_energy(params.zpl).0;
    Ok(params.scale * spec.boltzmann_integral(detuning, e_zpl, kt))
}

/// Evaluates the Cartesian grid `T_list × λ_grid` (temperature-major).
pub fn qc_rate_curve(
    lambdas: &[WavelengthNm],
    temps: &[TemperatureK],
    spec: &EmissionSpectrum,
    params: &QuasiContinuumParams,
) -> Result<RateCurve> {
    let grid: Vec<(WavelengthNm, TemperatureK)> = temps
        .iter()
        .flat_map(|&t| lambdas.iter().map(move |&l| (l, t)))
        .collect();
    let points = grid
        .par_iter()
        .map(|&(l, t)| qc_rate_per_power(l, t, spec, params).and_then(|r| RatePoint::new(l, t, r, 0.0, 0)))
        .collect::<Result<Vec<_>>>()?;
    RateCurve::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::NV0_ZPL_NM;
    use proptest::prelude::*;

    fn zpl() -> WavelengthNm {
        WavelengthNm::new(NV0_ZPL_NM).unwrap()
    }

    fn nm(v: f64) -> WavelengthNm {
        WavelengthNm::new(v).unwrap()
    }

    fn t(k: f64) -> TemperatureK {
        TemperatureK::new(k).unwrap()
    }

    /// Wavelength whose detuning below the 575 nm ZPL is `d` meV.
    fn at_detuning(d: f64) -> WavelengthNm {
        let c = PhysicalConstants::CODATA;
        c.energy_to_wavelength(crate::units::EnergyMeV(c.wavelength_to_energy(zpl()).0 - d))
            .unwrap()
    }

    fn spike(center: f64, half: f64, weight: f64) -> EmissionSpectrum {
        EmissionSpectrum::new(
            vec![(0.0, 0.0), (center - half, 0.0), (center, weight / half), (center + half, 0.0), (200.0, 0.0)],
            "spike",
        )
        .unwrap()
    }

    #[test]
    fn parses_csv() {
        let text = "# measured sideband\nepsilon_meV,density\n0,0.1\n10,0.5\n# mid comment\n20,0.2\n";
        let s = read_spectrum(text.as_bytes(), SpectrumFormat::Detuning, "experimental").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.source_label(), "experimental");
    }

    #[test]
    fn rejects_bad_spectra() {
        let neg = "epsilon_meV,density\n0,0.1\n10,-0.5\n";
        assert!(matches!(read_spectrum(neg.as_bytes(), SpectrumFormat::Detuning, "x"), Err(Error::Validation(_))));
        let dup = "epsilon_meV,density\n0,0.1\n10,0.5\n10,0.4\n";
        match read_spectrum(dup.as_bytes(), SpectrumFormat::Detuning, "x") {
            Err(Error::Validation(m)) => assert!(m.contains("non-increasing abscissa")),
            other => panic!("{other:?}"),
        }
        let junk = "epsilon_meV,density\n0,0.1\n10,abc\n";
        match read_spectrum(junk.as_bytes(), SpectrumFormat::Detuning, "x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(EmissionSpectrum::new(vec![(1.0, 1.0)], "x").is_err());
    }

    #[test]
    fn photon_energy_convention() {
        let e_zpl = PhysicalConstants::CODATA.wavelength_to_energy(zpl()).0;
        let text = format!(
            "photon_energy_meV,density\n{},1\n{},2\n{},3\n{},4\n",
            e_zpl - 30.0,
            e_zpl - 20.0,
            e_zpl - 10.0,
            e_zpl + 5.0
        );
        let s = read_spectrum(text.as_bytes(), SpectrumFormat::PhotonEnergy { zpl: zpl() }, "x").unwrap();
        let got: Vec<(f64, f64)> = s.samples().collect();
        assert_eq!(got.len(), 3);
        assert!((got[0].0 - 10.0).abs() < 1e-9 && got[0].1 == 3.0);
        assert!((got[2].0 - 30.0).abs() < 1e-9 && got[2].1 == 1.0);
    }

    #[test]
    fn spike_closed_form() {
        let p = QuasiContinuumParams::new(2.5, zpl()).unwrap();
        let s = spike(30.0, 1e-4, 0.8);
        let r = qc_rate_per_power(at_detuning(20.0), t(300.0), &s, &p).unwrap();
        let expected = 2.5 * 0.8 * (-30.0 / PhysicalConstants::CODATA.thermal_energy(t(300.0))).exp();
        assert!(((r - expected) / expected).abs() < 1e-10, "{r} vs {expected}");
        assert!((expected / 2.0 - 0.3133).abs() < 1e-4);
        assert_eq!(qc_rate_per_power(at_detuning(35.0), t(300.0), &s, &p).unwrap(), 0.0);
    }

    #[test]
    fn uniform_high_temperature_limit() {
        let p = QuasiContinuumParams::new(1.0, zpl()).unwrap();
        let s = EmissionSpectrum::new(vec![(0.0, 0.01), (100.0, 0.01)], "uniform").unwrap();
        let r = qc_rate_per_power(zpl(), t(1e9), &s, &p).unwrap();
        assert!((r - 1.0).abs() < 1e-6);
        assert!((s.boltzmann_integral(0.0, 1e4, f64::INFINITY) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_temperature_gives_zero() {
        let p = QuasiContinuumParams::new(1.0, zpl()).unwrap();
        let s = spike(30.0, 1.0, 1.0);
        assert_eq!(qc_rate_per_power(nm(580.0), t(0.0), &s, &p).unwrap(), 0.0);
        assert!(qc_rate_per_power(nm(570.0), t(100.0), &s, &p).is_err());
    }

    #[test]
    fn curve_cardinality() {
        let p = QuasiContinuumParams::new(1.0, zpl()).unwrap();
        let s = spike(30.0, 5.0, 1.0);
        let lambdas: Vec<WavelengthNm> = (0..21).map(|i| nm(580.0 + i as f64)).collect();
        let temps = [t(100.0), t(200.0), t(300.0)];
        assert_eq!(qc_rate_curve(&lambdas, &temps, &s, &p).unwrap().len(), 63);
        assert!(qc_rate_curve(&[], &temps, &s, &p).unwrap().is_empty());
    }

    #[test]
    fn resampling_converges() {
        let smooth: Vec<(f64, f64)> = (0..=400)
            .map(|i| {
                let e = i as f64 * 0.5;
                (e, e * (-e / 40.0).exp() + 0.3 * (-(e - 60.0).powi(2) / 50.0).exp())
            })
            .collect();
        let s = EmissionSpectrum::new(smooth, "smooth").unwrap();
        let p = QuasiContinuumParams::new(1.0, zpl()).unwrap();
        for d in [3.3, 18.6, 47.2] {
            let coarse = qc_rate_per_power(at_detuning(d), t(150.0), &s.resample(0.5).unwrap(), &p).unwrap();
            let fine = qc_rate_per_power(at_detuning(d), t(150.0), &s.resample(0.25).unwrap(), &p).unwrap();
            assert!(((coarse - fine) / fine).abs() < 1e-4);
        }
    }

    #[test]
    fn series_and_closed_form_weights_agree() {
        for &r in &[0.049_999, 0.050_001] {
            let kt = 1.0 / r;
            let v = linear_times_exponential(0.0, 1.0, 0.3, 0.7, kt);
            let e = (-r).exp();
            let exact = 0.3 * (r - 1.0 + e) / (r * r) + 0.7 * (1.0 - (1.0 + r) * e) / (r * r);
            assert!((v - exact).abs() < 1e-12);
        }
    }

    fn random_spectrum() -> impl Strategy<Value = EmissionSpectrum> {
        prop::collection::vec((0.05f64..3.0, 0.0f64..1.0), 2..60).prop_map(|steps| {
            let mut e = 0.0;
            let samples = steps
                .into_iter()
                .map(|(dx, a)| {
                    let s = (e, a);
                    e += dx;
                    s
                })
                .collect();
            EmissionSpectrum::new(samples, "random").unwrap()
        })
    }

    proptest! {
        #[test]
        fn window_monotone(s in random_spectrum(), temp in 1.0f64..400.0) {
            let p = QuasiContinuumParams::new(1.0, zpl()).unwrap();
            let mut prev = f64::INFINITY;
            for i in 0..=60 {
                let r = qc_rate_per_power(at_detuning(i as f64 * 1.5), t(temp), &s, &p).unwrap();
                prop_assert!(r <= prev * (1.0 + 1e-12));
                prev = r;
            }
        }

        #[test]
        fn temperature_monotone(s in random_spectrum(), d in 0.0f64..100.0) {
            let p = QuasiContinuumParams::new(1.0, zpl()).unwrap();
            let mut prev = 0.0;
            for temp in [0.0, 4.0, 50.0, 100.0, 200.0, 300.0, 1000.0] {
                let r = qc_rate_per_power(at_detuning(d), t(temp), &s, &p).unwrap();
                prop_assert!(r >= prev * (1.0 - 1e-12));
                prev = r;
            }
        }

        #[test]
        fn linear_in_spectrum(a in random_spectrum(), alpha in 0.0f64..3.0, beta in 0.0f64..3.0, d in 0.0f64..60.0) {
            let b_samples: Vec<(f64, f64)> = a.samples().map(|(e, v)| (e, 1.0 - 0.5 * v)).collect();
            let b = EmissionSpectrum::new(b_samples, "b").unwrap();
            let mix = a.combine(alpha, &b, beta).unwrap();
            let p = QuasiContinuumParams::new(1.0, zpl()).unwrap();
            let l = at_detuning(d);
            let lhs = qc_rate_per_power(l, t(250.0), &mix, &p).unwrap();
            let rhs = alpha * qc_rate_per_power(l, t(250.0), &a, &p).unwrap()
                + beta * qc_rate_per_power(l, t(250.0), &b, &p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300) + 1e-300);
        }
    }
}
