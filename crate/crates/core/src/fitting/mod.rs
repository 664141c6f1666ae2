//! Least-squares fitting of rate models to measured `R(λ, T)`.
//!
//! The overall scale is never searched over: for any trial of the remaining
//! parameters it is set to its closed-form optimum (a weighted mean in log
//! space, a weighted projection in linear space), then clamped to its bounds.

pub mod nelder_mead;

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective_mode::{coupling_spectrum, EffectiveModeModel, EnumerationLimits, ModeSet};
use crate::error::{Error, Result};
use crate::franck_condon::PhononMode;
use crate::quasi_continuum::{qc_rate_per_power, EmissionSpectrum, QuasiContinuumParams};
use crate::rate_curve::RateCurve;
use crate::units::{EnergyMeV, TemperatureK, WavelengthNm};

pub use nelder_mead::OptimizerConfig;

pub const FIT_REPORT_SCHEMA: &str = "fit_report/v1";
/// Residual assigned to a point the model could not evaluate (or evaluated
/// to zero under a log loss).
pub const PENALTY_RESIDUAL: f64 = 1e3;

pub const SCALE: &str = "scale";
pub const GAMMA: &str = "gamma";

#[derive(Debug, Clone)]
pub enum FitModel {
    QuasiContinuum {
        spectrum: EmissionSpectrum,
        zpl: WavelengthNm,
    },
    /// Mode energies are fixed at `energies` unless `E<k>` parameters are given.
    EffectiveMode {
        energies: Vec<EnergyMeV>,
        zpl: WavelengthNm,
        limits: EnumerationLimits,
    },
}

impl FitModel {
    pub fn kind(&self) -> &'static str {
        match self {
            FitModel::QuasiContinuum { .. } => "quasi_continuum",
            FitModel::EffectiveMode { .. } => "effective_mode",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    #[default]
    LogRate,
    LinearRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub init: f64,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub fixed: bool,
    /// One independent copy of the parameter per data temperature.
    #[serde(default)]
    pub per_temperature: bool,
    /// Search uniformly in `ln` between the bounds.
    #[serde(default)]
    pub log_scale: bool,
}

impl ParamSpec {
    pub fn free(name: &str, init: f64, lower: f64, upper: f64) -> Self {
        ParamSpec {
            name: name.into(),
            init,
            lower,
            upper,
            fixed: false,
            per_temperature: false,
            log_scale: false,
        }
    }

    pub fn fixed(name: &str, value: f64) -> Self {
        ParamSpec {
            fixed: true,
            ..ParamSpec::free(name, value, value, value)
        }
    }

    fn to_unit(&self, v: f64) -> f64 {
        if self.upper == self.lower {
            return 0.0;
        }
        if self.log_scale {
            (v.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln())
        } else {
            (v - self.lower) / (self.upper - self.lower)
        }
    }

    fn at_unit(&self, u: f64) -> f64 {
        let v = if self.log_scale {
            (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp()
        } else {
            self.lower + u * (self.upper - self.lower)
        };
        v.clamp(self.lower, self.upper)
    }
}

pub fn mode_param(k: usize) -> String {
    format!("S{}", k + 1)
}

pub fn energy_param(k: usize) -> String {
    format!("E{}", k + 1)
}

/// Defaults: every `S_k` free in [0, 3] from 0.3, the lowest-energy mode
/// per temperature when there are several modes, `gamma` free in
/// [0.5, 30] meV from 5, and a global profiled scale.
pub fn default_params(model: &FitModel) -> Vec<ParamSpec> {
    let scale = ParamSpec {
        log_scale: true,
        ..ParamSpec::free(SCALE, 1.0, 1e-200, 1e200)
    };
    match model {
        FitModel::QuasiContinuum { .. } => vec![scale],
        FitModel::EffectiveMode { energies, .. } => {
            let lowest = (0..energies.len()).min_by(|&a, &b| energies[a].0.total_cmp(&energies[b].0));
            let mut v: Vec<ParamSpec> = (0..energies.len())
                .map(|k| ParamSpec {
                    per_temperature: energies.len() > 1 && Some(k) == lowest,
                    ..ParamSpec::free(&mode_param(k), 0.3, 0.0, 3.0)
                })
                .collect();
            v.push(ParamSpec::free(GAMMA, 5.0, 0.5, 30.0));
            v.push(scale);
            v
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    param: usize,
    temp: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    data: RateCurve,
    model: FitModel,
    params: Vec<ParamSpec>,
    loss: LossSpace,
    temps: Vec<TemperatureK>,
    point_temp: Vec<usize>,
    slots: Vec<Slot>,
    /// `slot_of[param][temp]`.
    slot_of: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl FitProblem {
    pub fn new(data: RateCurve, model: FitModel, params: Vec<ParamSpec>, loss: LossSpace) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Validation("fit data is empty".into()));
        }
        if loss == LossSpace::LogRate {
            if let Some(p) = data.points().iter().find(|p| !(p.rate_hz > 0.0)) {
                return Err(Error::Validation(format!(
                    "log-rate loss needs positive rates; got {} at {} nm, {} K",
                    p.rate_hz,
                    p.wavelength_nm.value(),
                    p.temperature_k.value()
                )));
            }
        }
        let allowed: Vec<String> = match &model {
            FitModel::QuasiContinuum { .. } => vec![SCALE.into()],
            FitModel::EffectiveMode { energies, .. } => {
                if energies.is_empty() {
                    return Err(Error::Validation("effective-mode fit needs at least one mode energy".into()));
                }
                let mut v: Vec<String> = (0..energies.len()).map(mode_param).collect();
                v.extend((0..energies.len()).map(energy_param));
                v.extend([GAMMA.to_string(), SCALE.to_string()]);
                v
            }
        };
        let required: Vec<String> = match &model {
            FitModel::QuasiContinuum { .. } => vec![SCALE.into()],
            FitModel::EffectiveMode { energies, .. } => (0..energies.len())
                .map(mode_param)
                .chain([GAMMA.to_string(), SCALE.to_string()])
                .collect(),
        };
        let mut seen = BTreeSet::new();
        for p in &params {
            if !allowed.contains(&p.name) {
                return Err(Error::Validation(format!(
                    "unknown parameter '{}' for a {} fit (allowed: {})",
                    p.name,
                    model.kind(),
                    allowed.join(", ")
                )));
            }
            if !seen.insert(p.name.clone()) {
                return Err(Error::Validation(format!("parameter '{}' given twice", p.name)));
            }
            if !(p.lower.is_finite() && p.upper.is_finite() && p.init.is_finite()) {
                return Err(Error::Validation(format!("parameter '{}': bounds and init must be finite", p.name)));
            }
            if p.lower > p.upper || (!p.fixed && p.lower == p.upper) {
                return Err(Error::Validation(format!("parameter '{}': empty bounds [{}, {}]", p.name, p.lower, p.upper)));
            }
            if !p.fixed && !(p.lower..=p.upper).contains(&p.init) {
                return Err(Error::Validation(format!(
                    "parameter '{}': initial guess {} outside [{}, {}]",
                    p.name, p.init, p.lower, p.upper
                )));
            }
            if p.log_scale && p.lower <= 0.0 {
                return Err(Error::Validation(format!("parameter '{}': log_scale needs a positive lower bound", p.name)));
            }
        }
        if let Some(missing) = required.iter().find(|r| !seen.contains(*r)) {
            return Err(Error::Validation(format!("parameter '{missing}' is required for a {} fit", model.kind())));
        }

        let temps = data.temperatures();
        let point_temp = data
            .points()
            .iter()
            .map(|p| temps.iter().position(|t| *t == p.temperature_k).expect("temperature listed"))
            .collect();
        let mut slots = Vec::new();
        let mut slot_of = Vec::new();
        for (i, p) in params.iter().enumerate() {
            if p.per_temperature {
                slot_of.push((0..temps.len()).map(|t| slots.len() + t).collect());
                slots.extend((0..temps.len()).map(|t| Slot { param: i, temp: Some(t) }));
            } else {
                slot_of.push(vec![slots.len(); temps.len()]);
                slots.push(Slot { param: i, temp: None });
            }
        }
        let with_stderr = data.points().iter().all(|p| p.stderr_hz > 0.0);
        let weights = data
            .points()
            .iter()
            .map(|p| match (with_stderr, loss) {
                (false, _) => 1.0,
                (true, LossSpace::LogRate) => (p.rate_hz / p.stderr_hz).powi(2),
                (true, LossSpace::LinearRate) => p.stderr_hz.powi(-2),
            })
            .collect();
        Ok(FitProblem {
            data,
            model,
            params,
            loss,
            temps,
            point_temp,
            slots,
            slot_of,
            weights,
        })
    }

    pub fn data(&self) -> &RateCurve {
        &self.data
    }

    pub fn model(&self) -> &FitModel {
        &self.model
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn loss_space(&self) -> LossSpace {
        self.loss
    }

    fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    fn is_scale(&self, slot: usize) -> bool {
        self.params[self.slots[slot].param].name == SCALE
    }

    fn search_slots(&self) -> Vec<usize> {
        (0..self.slots.len())
            .filter(|&s| !self.params[self.slots[s].param].fixed && !self.is_scale(s))
            .collect()
    }

    fn initial_theta(&self) -> Vec<f64> {
        self.slots.iter().map(|s| self.params[s.param].init).collect()
    }

    fn value(&self, theta: &[f64], name: &str, t: usize) -> Option<f64> {
        self.param_index(name).map(|i| theta[self.slot_of[i][t]])
    }

    /// Model rates with unit scale; `None` where evaluation failed.
    fn unscaled(&self, theta: &[f64]) -> Vec<Option<f64>> {
        let points = self.data.points();
        match &self.model {
            FitModel::QuasiContinuum { spectrum, zpl } => {
                let params = QuasiContinuumParams::new(1.0, *zpl).expect("unit scale");
                points
                    .iter()
                    .map(|p| qc_rate_per_power(p.wavelength_nm, p.temperature_k, spectrum, &params).ok())
                    .collect()
            }
            FitModel::EffectiveMode { energies, zpl, limits } => {
                let mut out = vec![None; points.len()];
                for t in 0..self.temps.len() {
                    let Some(model) = self.mode_set(theta, energies, t).ok().and_then(|m| EffectiveModeModel::new(&m, *limits).ok())
                    else {
                        continue;
                    };
                    for (i, p) in points.iter().enumerate().filter(|(i, _)| self.point_temp[*i] == t) {
                        out[i] = model.rate_per_power(p.wavelength_nm, p.temperature_k, *zpl).ok();
                    }
                }
                out
            }
        }
    }

    fn mode_set(&self, theta: &[f64], energies: &[EnergyMeV], t: usize) -> Result<ModeSet> {
        let modes = energies
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let energy = self.value(theta, &energy_param(k), t).map_or(*e, EnergyMeV);
                let s = self.value(theta, &mode_param(k), t).expect("validated");
                PhononMode::new(format!("mode{}", k + 1), energy, s)
            })
            .collect::<Result<Vec<_>>>()?;
        let gamma = self.value(theta, GAMMA, t).expect("validated");
        ModeSet::new(modes, EnergyMeV(gamma), 1.0)
    }

    /// Fills the scale slots of `theta` with their optimum given `model`.
    fn profile_scale(&self, theta: &mut [f64], model: &[Option<f64>]) {
        let Some(pi) = self.param_index(SCALE) else { return };
        let spec = &self.params[pi];
        if spec.fixed {
            return;
        }
        let mut groups: Vec<usize> = self.slot_of[pi].clone();
        groups.dedup();
        for slot in groups {
            let (mut num, mut den) = (0.0, 0.0);
            for (i, p) in self.data.points().iter().enumerate() {
                if self.slot_of[pi][self.point_temp[i]] != slot {
                    continue;
                }
                let w = self.weights[i];
                match (self.loss, model[i]) {
                    (LossSpace::LogRate, Some(m)) if m > 0.0 && m.is_finite() => {
                        num += w * (p.rate_hz.ln() - m.ln());
                        den += w;
                    }
                    (LossSpace::LinearRate, Some(m)) if m.is_finite() => {
                        num += w * p.rate_hz * m;
                        den += w * m * m;
                    }
                    _ => {}
                }
            }
            let s = match self.loss {
                _ if den == 0.0 => spec.init,
                LossSpace::LogRate => (num / den).exp(),
                LossSpace::LinearRate => num / den,
            };
            theta[slot] = s.clamp(spec.lower, spec.upper);
        }
    }

    fn residuals(&self, theta: &[f64], model: &[Option<f64>]) -> Vec<f64> {
        let pi = self.param_index(SCALE).expect("validated");
        self.data
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = theta[self.slot_of[pi][self.point_temp[i]]];
                let sw = self.weights[i].sqrt();
                match (self.loss, model[i]) {
                    (LossSpace::LogRate, Some(m)) if m > 0.0 && m.is_finite() => sw * (p.rate_hz.ln() - (s * m).ln()),
                    (LossSpace::LinearRate, Some(m)) if m.is_finite() => sw * (p.rate_hz - s * m),
                    _ => PENALTY_RESIDUAL,
                }
            })
            .collect()
    }

    /// Weighted residual sum of squares with the scale profiled out.
    fn objective(&self, theta: &mut [f64]) -> f64 {
        let model = self.unscaled(theta);
        self.profile_scale(theta, &model);
        self.residuals(theta, &model).iter().map(|r| r * r).sum()
    }

    fn theta_from_unit(&self, free: &[usize], u: &[f64]) -> Vec<f64> {
        let mut theta = self.initial_theta();
        for (&slot, &x) in free.iter().zip(u) {
            theta[slot] = self.params[self.slots[slot].param].at_unit(x);
        }
        theta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedParam {
    pub name: String,
    #[serde(rename = "temperature_K")]
    pub temperature_k: Option<f64>,
    pub value: f64,
    pub stderr: Option<f64>,
    pub lower: f64,
    pub upper: f64,
    pub fixed: bool,
    /// Set in closed form rather than searched.
    pub profiled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResidual {
    pub wavelength_nm: f64,
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    #[serde(rename = "data_Hz")]
    pub data_hz: f64,
    #[serde(rename = "model_Hz")]
    pub model_hz: Option<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<FittedParam>,
    pub residuals: Vec<PointResidual>,
    /// Weighted residual sum of squares.
    pub loss: f64,
    pub converged: bool,
    pub n_evals: usize,
    pub diagnostics: Vec<String>,
}

impl FitResult {
    /// Value of a shared parameter, or of a per-temperature one at `t`.
    pub fn value(&self, name: &str, t: Option<TemperatureK>) -> Option<f64> {
        self.params
            .iter()
            .find(|p| p.name == name && (p.temperature_k.is_none() || p.temperature_k == t.map(|t| t.value())))
            .map(|p| p.value)
    }
}

pub fn fit(problem: &FitProblem, cfg: &OptimizerConfig) -> Result<FitResult> {
    let free = problem.search_slots();
    let init = problem.initial_theta();
    let mut starts = vec![free
        .iter()
        .map(|&s| problem.params[problem.slots[s].param].to_unit(init[s]))
        .collect::<Vec<f64>>()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.multistart {
        starts.push((0..free.len()).map(|_| rng.random::<f64>()).collect());
    }

    let objective = |u: &[f64]| {
        let mut theta = problem.theta_from_unit(&free, u);
        problem.objective(&mut theta)
    };
    let runs: Vec<nelder_mead::Minimum> = starts.par_iter().map(|s| nelder_mead::minimize(&objective, s, cfg)).collect();
    let n_evals = runs.iter().map(|r| r.n_evals).sum();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.f < a.f { b } else { a })
        .expect("at least one start");

    let mut theta = problem.theta_from_unit(&free, &best.x);
    let model = problem.unscaled(&theta);
    problem.profile_scale(&mut theta, &model);
    let residuals = problem.residuals(&theta, &model);
    let loss = residuals.iter().map(|r| r * r).sum();

    let mut diagnostics = Vec::new();
    let penalized = model
        .iter()
        .zip(&residuals)
        .filter(|(m, r)| m.is_none() || **r == PENALTY_RESIDUAL)
        .count();
    if penalized > 0 {
        diagnostics.push(format!("{penalized} point(s) could not be evaluated at the optimum and were penalized"));
    }
    if !best.converged {
        diagnostics.push(format!("optimizer stopped at its budget of {} evaluations per start", cfg.max_evals));
    }
    let stderr = standard_errors(problem, &theta, &residuals, &mut diagnostics);

    let scale_param = problem.param_index(SCALE);
    let params = problem
        .slots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let spec = &problem.params[s.param];
            FittedParam {
                name: spec.name.clone(),
                temperature_k: s.temp.map(|t| problem.temps[t].value()),
                value: theta[i],
                stderr: stderr[i],
                lower: spec.lower,
                upper: spec.upper,
                fixed: spec.fixed,
                profiled: Some(s.param) == scale_param && !spec.fixed,
            }
        })
        .collect();
    let point_residuals = problem
        .data
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = theta[problem.slot_of[scale_param.expect("validated")][problem.point_temp[i]]];
            PointResidual {
                wavelength_nm: p.wavelength_nm.value(),
                temperature_k: p.temperature_k.value(),
                data_hz: p.rate_hz,
                model_hz: model[i].map(|m| s * m),
                residual: residuals[i],
            }
        })
        .collect();
    Ok(FitResult {
        params,
        residuals: point_residuals,
        loss,
        converged: best.converged,
        n_evals,
        diagnostics,
    })
}

/// `√diag(s² (JᵀJ)⁻¹)` over every non-fixed slot, scale included, with
/// `s² = RSS/(n - p)` and `J` from central differences.
fn standard_errors(problem: &FitProblem, theta: &[f64], residuals: &[f64], diagnostics: &mut Vec<String>) -> Vec<Option<f64>> {
    let mut out = vec![None; theta.len()];
    let active: Vec<usize> = (0..theta.len())
        .filter(|&s| !problem.params[problem.slots[s].param].fixed)
        .collect();
    let (n, p) = (residuals.len(), active.len());
    if p == 0 {
        return out;
    }
    if n <= p {
        diagnostics.push(format!("no standard errors: {n} points for {p} parameters"));
        return out;
    }
    let eval = |th: &[f64]| -> Vec<f64> {
        let model = problem.unscaled(th);
        problem.residuals(th, &model)
    };
    let mut jac = DMatrix::<f64>::zeros(n, p);
    for (c, &slot) in active.iter().enumerate() {
        let spec = &problem.params[problem.slots[slot].param];
        let x = theta[slot];
        // coarse enough to average over the small jumps the Lorentzian window
        // cut introduces as terms enter or leave it
        let h = 1e-3 * x.abs().max(1e-3 * (spec.upper - spec.lower).min(1.0)).max(1e-12);
        let (lo, hi) = ((x - h).max(spec.lower), (x + h).min(spec.upper));
        if hi <= lo {
            continue;
        }
        let mut plus = theta.to_vec();
        plus[slot] = hi;
        let mut minus = theta.to_vec();
        minus[slot] = lo;
        let (rp, rm) = (eval(&plus), eval(&minus));
        for r in 0..n {
            jac[(r, c)] = (rp[r] - rm[r]) / (hi - lo);
        }
    }
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let s2 = rss / (n - p) as f64;
    match (jac.transpose() * &jac).try_inverse() {
        Some(cov) => {
            for (c, &slot) in active.iter().enumerate() {
                let v = s2 * cov[(c, c)];
                out[slot] = (v.is_finite() && v >= 0.0).then(|| v.sqrt());
            }
        }
        None => diagnostics.push("no standard errors: singular curvature matrix".into()),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingCurve {
    #[serde(rename = "temperature_K")]
    pub temperature_k: Option<f64>,
    #[serde(rename = "energy_meV")]
    pub energy_mev: Vec<f64>,
    pub coupling: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub schema: String,
    pub model: String,
    pub loss_space: LossSpace,
    pub converged: bool,
    /// Set when the fit did not converge; the diagnostics say why.
    pub flagged: bool,
    pub n_evals: usize,
    pub n_points: usize,
    pub loss: f64,
    pub params: Vec<FittedParam>,
    pub residuals: Vec<PointResidual>,
    pub coupling_spectrum: Vec<CouplingCurve>,
    pub diagnostics: Vec<String>,
}

/// Energy grid of the coupling spectrum in reports: 0–100 meV, 0.25 meV steps.
pub fn coupling_grid() -> Vec<EnergyMeV> {
    (0..=400).map(|i| EnergyMeV(i as f64 * 0.25)).collect()
}

pub fn fit_report(result: &FitResult, problem: &FitProblem) -> FitReport {
    let mut curves = Vec::new();
    if let FitModel::EffectiveMode { energies, .. } = &problem.model {
        let theta: Vec<f64> = problem
            .slots
            .iter()
            .map(|s| {
                let name = &problem.params[s.param].name;
                result
                    .value(name, s.temp.map(|t| problem.temps[t]))
                    .unwrap_or(problem.params[s.param].init)
            })
            .collect();
        let per_t = problem
            .params
            .iter()
            .any(|p| p.per_temperature && p.name != SCALE);
        let groups: Vec<Option<usize>> = if per_t {
            (0..problem.temps.len()).map(Some).collect()
        } else {
            vec![None]
        };
        let grid = coupling_grid();
        for g in groups {
            if let Ok(set) = problem.mode_set(&theta, energies, g.unwrap_or(0)) {
                let spectrum = coupling_spectrum(&set, &grid);
                curves.push(CouplingCurve {
                    temperature_k: g.map(|t| problem.temps[t].value()),
                    energy_mev: spectrum.iter().map(|(e, _)| e.0).collect(),
                    coupling: spectrum.iter().map(|(_, s)| *s).collect(),
                });
            }
        }
    }
    FitReport {
        schema: FIT_REPORT_SCHEMA.into(),
        model: problem.model.kind().into(),
        loss_space: problem.loss,
        converged: result.converged,
        flagged: !result.converged,
        n_evals: result.n_evals,
        n_points: problem.data.len(),
        loss: result.loss,
        params: result.params.clone(),
        residuals: result.residuals.clone(),
        coupling_spectrum: curves,
        diagnostics: result.diagnostics.clone(),
    }
}
