use std::path::{Path, PathBuf};

use anyhow::anyhow;
use log::info;
use serde::Deserialize;

use phonocycle::effective_mode::{EffectiveModeModel, EnumerationLimits};
use phonocycle::quasi_continuum::{load_spectrum, qc_rate_curve, qc_rate_per_power, QuasiContinuumParams, SpectrumFormat};
use phonocycle::rate_curve::{RateCurve, RatePoint};
use phonocycle::units::{TemperatureK, WavelengthNm, NV0_ZPL_NM};

use crate::failure::{CliResult, Context, Failure};
use crate::io::{ensure_dir, read_config, relative_to, write_file};
use crate::simulate::load_modeset;

pub const RATE_SCHEMA: &str = "rate/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RateModel {
    /// Quasi-continuum: Boltzmann-weighted integral of an emission spectrum.
    Qc,
    /// Effective modes: discrete Franck–Condon sum with Lorentzian broadening.
    Em,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RateConfig {
    #[allow(dead_code)]
    schema: String,
    spectrum: Option<PathBuf>,
    #[serde(default)]
    photon_energy: bool,
    modeset: Option<PathBuf>,
    scale: Option<f64>,
    zpl_nm: Option<f64>,
    wavelengths_nm: Option<Vec<f64>>,
    #[serde(rename = "temperatures_K")]
    temperatures: Option<Vec<f64>>,
    limits: Option<EnumerationLimits>,
}

pub struct RateArgs {
    pub model: RateModel,
    pub config: Option<PathBuf>,
    pub spectrum: Option<PathBuf>,
    pub photon_energy: bool,
    pub modeset: Option<PathBuf>,
    pub scale: Option<f64>,
    pub zpl: Option<f64>,
    pub wavelengths: Option<Vec<f64>>,
    pub temperatures: Option<Vec<f64>>,
    pub max_quanta: Option<u32>,
    pub window: Option<f64>,
    pub output: Option<PathBuf>,
}

fn to_units(lambdas: &[f64], temps: &[f64]) -> CliResult<(Vec<WavelengthNm>, Vec<TemperatureK>)> {
    let l = lambdas
        .iter()
        .map(|&v| WavelengthNm::new(v))
        .collect::<phonocycle::Result<Vec<_>>>()
        .at("--wavelengths")?;
    let t = temps
        .iter()
        .map(|&v| TemperatureK::new(v))
        .collect::<phonocycle::Result<Vec<_>>>()
        .at("--temperatures")?;
    if l.is_empty() || t.is_empty() {
        return Err(Failure::config(anyhow!("need at least one wavelength and one temperature")));
    }
    Ok((l, t))
}

/// The grid is evaluated in parallel; on failure it is re-run point by point
/// so the error names the offending `(λ, T)`.
fn locate_failure<F>(lambdas: &[WavelengthNm], temps: &[TemperatureK], eval: F, err: phonocycle::Error) -> Failure
where
    F: Fn(WavelengthNm, TemperatureK) -> phonocycle::Result<f64>,
{
    for &t in temps {
        for &l in lambdas {
            if let Err(e) = eval(l, t).and_then(|r| RatePoint::new(l, t, r, 0.0, 0)) {
                return Failure::from(e).context(format_args!("at λ = {} nm, T = {} K", l.value(), t.value()));
            }
        }
    }
    Failure::from(err)
}

pub fn run(args: RateArgs, out_dir: &Path) -> CliResult<()> {
    let (cfg, cfg_path) = match &args.config {
        Some(p) => (read_config::<RateConfig>(p, RATE_SCHEMA)?, p.clone()),
        None => (RateConfig::default(), PathBuf::new()),
    };
    let from_cfg = |p: &Option<PathBuf>| p.as_ref().map(|p| relative_to(&cfg_path, p));
    let lambdas = args
        .wavelengths
        .or(cfg.wavelengths_nm)
        .ok_or_else(|| Failure::config(anyhow!("--wavelengths is required")))?;
    let temps = args
        .temperatures
        .or(cfg.temperatures)
        .ok_or_else(|| Failure::config(anyhow!("--temperatures is required")))?;
    let (lambdas, temps) = to_units(&lambdas, &temps)?;
    let zpl = WavelengthNm::new(args.zpl.or(cfg.zpl_nm).unwrap_or(NV0_ZPL_NM)).at("--zpl")?;

    let curve = match args.model {
        RateModel::Qc => {
            let path = args
                .spectrum
                .or_else(|| from_cfg(&cfg.spectrum))
                .ok_or_else(|| Failure::config(anyhow!("rate qc needs --spectrum")))?;
            let format = if args.photon_energy || cfg.photon_energy {
                SpectrumFormat::PhotonEnergy { zpl }
            } else {
                SpectrumFormat::Detuning
            };
            let spectrum = load_spectrum(&path, format).at(path.display())?;
            let params = QuasiContinuumParams::new(args.scale.or(cfg.scale).unwrap_or(1.0), zpl).at("--scale")?;
            qc_rate_curve(&lambdas, &temps, &spectrum, &params)
                .map_err(|e| locate_failure(&lambdas, &temps, |l, t| qc_rate_per_power(l, t, &spectrum, &params), e))?
        }
        RateModel::Em => {
            let path = args
                .modeset
                .or_else(|| from_cfg(&cfg.modeset))
                .ok_or_else(|| Failure::config(anyhow!("rate em needs --modeset")))?;
            let mut modes = load_modeset(&path)?;
            if let Some(s) = args.scale.or(cfg.scale) {
                modes = modes.with_scale(s).at("--scale")?;
            }
            let mut limits = cfg.limits.unwrap_or_default();
            if let Some(q) = args.max_quanta {
                limits.max_quanta_per_mode = q;
            }
            if let Some(w) = args.window {
                limits.lorentzian_window_halfwidths = w;
            }
            let model = EffectiveModeModel::new(&modes, limits).at("mode set")?;
            let eval = |l, t| model.rate_per_power(l, t, zpl);
            let grid = model
                .rate_grid(&lambdas, &temps, zpl)
                .map_err(|e| locate_failure(&lambdas, &temps, eval, e))?;
            let mut points = Vec::with_capacity(grid.len());
            for (l, t, r) in grid {
                points.push(
                    RatePoint::new(l, t, r, 0.0, 0).at(format_args!("at λ = {} nm, T = {} K", l.value(), t.value()))?,
                );
            }
            RateCurve::new(points).at("rate grid")?
        }
    };

    let output = match args.output {
        Some(p) => p,
        None => {
            ensure_dir(out_dir)?;
            out_dir.join("rates.csv")
        }
    };
    write_file(&output, |w| curve.write_csv(w))?;
    info!("wrote {} points to {}", curve.len(), output.display());
    Ok(())
}
