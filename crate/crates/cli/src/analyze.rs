use std::path::{Path, PathBuf};

use anyhow::anyhow;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use phonocycle::blink::{analyze_trace, AnalysisConfig, RateCurve, RatePoint, ThresholdMethod};
use phonocycle::charge_cycle::{ChargeState, PhotonTrace};
use phonocycle::units::{TemperatureK, WavelengthNm};
use phonocycle::Error;

use crate::failure::{exit_code, CliResult, Failure};
use crate::io::{ensure_dir, read_config, write_file, write_json};

pub const ANALYZE_SCHEMA: &str = "analyze/v1";
pub const ANALYSIS_SCHEMA: &str = "analysis/v1";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeConfig {
    #[allow(dead_code)]
    schema: String,
    #[serde(default)]
    threshold: ThresholdMethod,
    #[serde(default = "default_min_dwell_bins")]
    min_dwell_bins: usize,
}

fn default_min_dwell_bins() -> usize {
    AnalysisConfig::default().min_dwell_bins
}

pub struct AnalyzeArgs<'a> {
    pub traces: &'a [PathBuf],
    pub config: Option<&'a Path>,
    pub threshold: Option<f64>,
    pub min_dwell_bins: Option<usize>,
    pub wavelength: Option<f64>,
    pub temperature: Option<f64>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum Status {
    Ok,
    /// The count histogram has no usable bright/dark split.
    Indistinguishable,
    Failed,
}

#[derive(Debug, Serialize)]
struct TraceReport {
    file: String,
    status: Status,
    wavelength_nm: Option<f64>,
    #[serde(rename = "temperature_K")]
    temperature_k: Option<f64>,
    threshold: Option<f64>,
    n_dark_dwells: Option<usize>,
    n_bright_dwells: Option<usize>,
    #[serde(rename = "rate_Hz")]
    rate_hz: Option<f64>,
    #[serde(rename = "stderr_Hz")]
    stderr_hz: Option<f64>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct AnalysisReport {
    schema: &'static str,
    config: AnalysisConfig,
    n_ok: usize,
    n_failed: usize,
    traces: Vec<TraceReport>,
}

impl TraceReport {
    fn failed(file: String, status: Status, error: String) -> Self {
        TraceReport {
            file,
            status,
            wavelength_nm: None,
            temperature_k: None,
            threshold: None,
            n_dark_dwells: None,
            n_bright_dwells: None,
            rate_hz: None,
            stderr_hz: None,
            error: Some(error),
        }
    }
}

fn analysis_config(args: &AnalyzeArgs<'_>) -> CliResult<AnalysisConfig> {
    let mut cfg = match args.config {
        Some(p) => {
            let c: AnalyzeConfig = read_config(p, ANALYZE_SCHEMA)?;
            AnalysisConfig {
                threshold: c.threshold,
                min_dwell_bins: c.min_dwell_bins,
            }
        }
        None => AnalysisConfig::default(),
    };
    if let Some(v) = args.threshold {
        if !v.is_finite() {
            return Err(Failure::config(anyhow!("--threshold must be finite")));
        }
        cfg.threshold = ThresholdMethod::Fixed { value: v };
    }
    if let Some(n) = args.min_dwell_bins {
        cfg.min_dwell_bins = n;
    }
    Ok(cfg)
}

fn coordinates(trace: &PhotonTrace, args: &AnalyzeArgs<'_>) -> phonocycle::Result<(WavelengthNm, TemperatureK)> {
    let l = match (trace.metadata.wavelength, args.wavelength) {
        (Some(l), _) => l,
        (None, Some(v)) => WavelengthNm::new(v)?,
        (None, None) => {
            return Err(Error::Validation(
                "trace has no '# wavelength_nm=' line; pass --wavelength".into(),
            ))
        }
    };
    let t = match (trace.metadata.temperature, args.temperature) {
        (Some(t), _) => t,
        (None, Some(v)) => TemperatureK::new(v)?,
        (None, None) => {
            return Err(Error::Validation(
                "trace has no '# temperature_K=' line; pass --temperature".into(),
            ))
        }
    };
    Ok((l, t))
}

fn analyze_one(path: &Path, cfg: &AnalysisConfig, args: &AnalyzeArgs<'_>) -> Result<(RatePoint, TraceReport), (u8, Box<TraceReport>)> {
    let file = path.display().to_string();
    let fail = |e: Error| {
        let status = match &e {
            Error::Analysis(m) if m.contains("indistinguishable") => Status::Indistinguishable,
            _ => Status::Failed,
        };
        (exit_code(&e), Box::new(TraceReport::failed(file.clone(), status, e.to_string())))
    };
    let trace = PhotonTrace::load(path).map_err(fail)?;
    let (l, t) = coordinates(&trace, args).map_err(fail)?;
    let a = analyze_trace(&trace, cfg).map_err(|e| {
        let (code, mut r) = fail(e);
        r.wavelength_nm = Some(l.value());
        r.temperature_k = Some(t.value());
        (code, r)
    })?;
    let point = RatePoint::new(l, t, a.dark.rate_hz, a.dark.stderr_hz, a.dark.n_dwells).map_err(fail)?;
    let report = TraceReport {
        file,
        status: Status::Ok,
        wavelength_nm: Some(l.value()),
        temperature_k: Some(t.value()),
        threshold: Some(a.threshold),
        n_dark_dwells: Some(a.dark.n_dwells),
        n_bright_dwells: Some(a.dwells.iter().filter(|d| d.state == ChargeState::Bright).count()),
        rate_hz: Some(a.dark.rate_hz),
        stderr_hz: Some(a.dark.stderr_hz),
        error: None,
    };
    Ok((point, report))
}

/// Analyzes every trace, writing whatever succeeded. Fails afterwards if
/// any trace did, with the exit code of the most serious failure.
pub fn run(args: &AnalyzeArgs<'_>, out_dir: &Path) -> CliResult<()> {
    let cfg = analysis_config(args)?;
    let mut curve = RateCurve::default();
    let mut reports = Vec::with_capacity(args.traces.len());
    let mut worst: Option<u8> = None;
    for path in args.traces {
        match analyze_one(path, &cfg, args) {
            Ok((point, report)) => match curve.push(point) {
                Ok(()) => {
                    info!("{}: R = {:.6e} ± {:.2e} Hz", path.display(), point.rate_hz, point.stderr_hz);
                    reports.push(report);
                }
                Err(e) => {
                    warn!("{}: {e}", path.display());
                    worst = Some(worst.map_or(exit_code(&e), |w| w.min(exit_code(&e))));
                    reports.push(TraceReport {
                        status: Status::Failed,
                        error: Some(e.to_string()),
                        ..report
                    });
                }
            },
            Err((code, report)) => {
                warn!("{}: {}", path.display(), report.error.as_deref().unwrap_or(""));
                worst = Some(worst.map_or(code, |w| w.min(code)));
                reports.push(*report);
            }
        }
    }

    ensure_dir(out_dir)?;
    write_file(&out_dir.join("rates.csv"), |w| curve.write_csv(w))?;
    let n_failed = reports.iter().filter(|r| !matches!(r.status, Status::Ok)).count();
    write_json(
        &out_dir.join("analysis.json"),
        &AnalysisReport {
            schema: ANALYSIS_SCHEMA,
            config: cfg,
            n_ok: reports.len() - n_failed,
            n_failed,
            traces: reports,
        },
    )?;
    match worst {
        None => Ok(()),
        Some(code) => Err(Failure {
            code,
            error: anyhow!("{n_failed} of {} trace(s) failed; see analysis.json", args.traces.len()),
        }),
    }
}
