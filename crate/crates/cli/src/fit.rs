use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use log::{info, warn};
use serde::Deserialize;

use phonocycle::effective_mode::EnumerationLimits;
use phonocycle::fitting::{default_params, fit, fit_report, FitModel, FitProblem, FitReport, LossSpace, OptimizerConfig, ParamSpec};
use phonocycle::quasi_continuum::{load_spectrum, SpectrumFormat};
use phonocycle::rate_curve::RateCurve;
use phonocycle::units::{EnergyMeV, WavelengthNm, NV0_ZPL_NM};
use phonocycle::Error;

use crate::failure::{CliResult, Context, Failure, EXIT_STRICT};
use crate::io::{ensure_dir, read_config, relative_to, write_file, write_json};

pub const FIT_SCHEMA: &str = "fit/v1";
pub const COUPLING_SCHEMA: &str = "coupling/v1";
pub const RESIDUALS_SCHEMA: &str = "residuals/v1";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    #[allow(dead_code)]
    schema: String,
    model: ModelConfig,
    /// Defaults depend on the model; see `default_params`.
    params: Option<Vec<ParamSpec>>,
    #[serde(default)]
    loss: LossSpace,
    #[serde(default)]
    optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Abscissa {
    #[default]
    Detuning,
    PhotonEnergy,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModelConfig {
    EffectiveMode {
        #[serde(rename = "mode_energies_meV")]
        mode_energies: Vec<f64>,
        #[serde(default = "default_zpl")]
        zpl_nm: f64,
        #[serde(default)]
        limits: EnumerationLimits,
    },
    QuasiContinuum {
        spectrum: PathBuf,
        #[serde(default)]
        abscissa: Abscissa,
        #[serde(default = "default_zpl")]
        zpl_nm: f64,
    },
}

fn default_zpl() -> f64 {
    NV0_ZPL_NM
}

pub struct FitArgs<'a> {
    pub data: &'a Path,
    pub config: &'a Path,
    pub strict: bool,
    pub seed: Option<u64>,
    pub multistart: Option<usize>,
    pub max_evals: Option<usize>,
}

fn build_model(m: &ModelConfig, config_path: &Path) -> CliResult<FitModel> {
    match m {
        ModelConfig::EffectiveMode {
            mode_energies,
            zpl_nm,
            limits,
        } => Ok(FitModel::EffectiveMode {
            energies: mode_energies.iter().map(|&e| EnergyMeV(e)).collect(),
            zpl: WavelengthNm::new(*zpl_nm).at("model.zpl_nm")?,
            limits: *limits,
        }),
        ModelConfig::QuasiContinuum { spectrum, abscissa, zpl_nm } => {
            let zpl = WavelengthNm::new(*zpl_nm).at("model.zpl_nm")?;
            let format = match abscissa {
                Abscissa::Detuning => SpectrumFormat::Detuning,
                Abscissa::PhotonEnergy => SpectrumFormat::PhotonEnergy { zpl },
            };
            let path = relative_to(config_path, spectrum);
            Ok(FitModel::QuasiContinuum {
                spectrum: load_spectrum(&path, format).at(path.display())?,
                zpl,
            })
        }
    }
}

fn write_coupling<W: Write>(report: &FitReport, w: &mut W) -> phonocycle::Result<()> {
    let io = |e| Error::Io {
        path: "coupling_spectrum.csv".into(),
        source: e,
    };
    writeln!(w, "# schema={COUPLING_SCHEMA}").map_err(io)?;
    writeln!(w, "temperature_K,energy_meV,coupling").map_err(io)?;
    for c in &report.coupling_spectrum {
        let t = c.temperature_k.map(|t| t.to_string()).unwrap_or_default();
        for (e, s) in c.energy_mev.iter().zip(&c.coupling) {
            writeln!(w, "{t},{e},{s}").map_err(io)?;
        }
    }
    Ok(())
}

fn write_residuals<W: Write>(report: &FitReport, w: &mut W) -> phonocycle::Result<()> {
    let io = |e| Error::Io {
        path: "fit_residuals.csv".into(),
        source: e,
    };
    writeln!(w, "# schema={RESIDUALS_SCHEMA}").map_err(io)?;
    writeln!(w, "wavelength_nm,temperature_K,data_Hz,model_Hz,residual").map_err(io)?;
    for r in &report.residuals {
        let model = r.model_hz.map(|m| m.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{model},{}", r.wavelength_nm, r.temperature_k, r.data_hz, r.residual).map_err(io)?;
    }
    Ok(())
}

pub fn run(args: &FitArgs<'_>, out_dir: &Path) -> CliResult<()> {
    let cfg: FitConfig = read_config(args.config, FIT_SCHEMA)?;
    let data = RateCurve::load(args.data).at(args.data.display())?;
    let model = build_model(&cfg.model, args.config)?;
    let params = cfg.params.unwrap_or_else(|| default_params(&model));
    let problem = FitProblem::new(data, model, params, cfg.loss).at("fit problem")?;

    let mut opt = cfg.optimizer;
    if let Some(s) = args.seed {
        opt.seed = s;
    }
    if let Some(m) = args.multistart {
        opt.multistart = m;
    }
    if let Some(n) = args.max_evals {
        opt.max_evals = n;
    }
    let result = fit(&problem, &opt).map_err(|e| Failure::runtime(anyhow!("fit failed: {e}")))?;
    let report = fit_report(&result, &problem);

    ensure_dir(out_dir)?;
    write_json(&out_dir.join("fit_report.json"), &report)?;
    write_file(&out_dir.join("coupling_spectrum.csv"), |w| write_coupling(&report, w))?;
    write_file(&out_dir.join("fit_residuals.csv"), |w| write_residuals(&report, w))?;
    info!("loss {:.6e} after {} evaluations", report.loss, report.n_evals);
    for p in &report.params {
        info!("  {} = {}", p.name, p.value);
    }

    if !report.converged {
        warn!("fit did not converge: {}", report.diagnostics.join("; "));
        if args.strict {
            return Err(Failure {
                code: EXIT_STRICT,
                error: anyhow!("fit did not converge (--strict); report written to {}", out_dir.display()),
            });
        }
    }
    Ok(())
}
