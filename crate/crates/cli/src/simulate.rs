use std::path::{Path, PathBuf};

use anyhow::anyhow;
use log::info;
use serde::{Deserialize, Serialize};

use phonocycle::charge_cycle::{mfpt_rate, simulate_blinking, ChainSpec, CycleSpec};
use phonocycle::effective_mode::{EffectiveModeModel, EnumerationLimits, ModeSet};
use phonocycle::units::{TemperatureK, WavelengthNm, NV0_ZPL_NM};

use crate::failure::{CliResult, Context, Failure};
use crate::io::{ensure_dir, read_config, relative_to, write_file, write_json};

pub const SIMULATE_SCHEMA: &str = "simulate/v1";
pub const MANIFEST_SCHEMA: &str = "manifest/v1";

const DEFAULT_BINS_PER_DARK_DWELL: f64 = 100.0;
const MAX_BINS: f64 = 1e8;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    #[allow(dead_code)]
    schema: String,
    #[serde(default)]
    seed: u64,
    ionization_rate: f64,
    bright_count_rate: f64,
    dark_count_rate: f64,
    duration_s: Option<f64>,
    /// Sets the duration to this many mean bright + dark cycles.
    target_dark_dwells: Option<f64>,
    bin_width_s: Option<f64>,
    /// Sets the bin width to this fraction of the mean dark dwell.
    bins_per_dark_dwell: Option<f64>,
    scenarios: Option<Vec<Scenario>>,
    grid: Option<Grid>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Scenario {
    wavelength_nm: WavelengthNm,
    #[serde(rename = "temperature_K")]
    temperature: TemperatureK,
    chain: ChainSpec,
}

/// Chains from the effective-mode cross-section: `γ₀ = σ(λ, T)·Φ`,
/// `γ₁ = σ′·Φ` (instantaneous when absent), `μ₁ = L`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Grid {
    wavelengths_nm: Vec<WavelengthNm>,
    #[serde(rename = "temperatures_K")]
    temperatures: Vec<TemperatureK>,
    modeset: PathBuf,
    #[serde(default = "default_zpl")]
    zpl_nm: WavelengthNm,
    flux: f64,
    sigma_prime: Option<f64>,
    #[serde(default, rename = "L")]
    relaxation: f64,
    #[serde(default)]
    limits: EnumerationLimits,
}

fn default_zpl() -> WavelengthNm {
    WavelengthNm::new(NV0_ZPL_NM).expect("positive")
}

#[derive(Debug, Serialize)]
struct Manifest {
    schema: &'static str,
    seed: u64,
    traces: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    file: String,
    wavelength_nm: f64,
    #[serde(rename = "temperature_K")]
    temperature_k: f64,
    seed: u64,
    chain: ChainSpec,
    /// Inverse mean dark dwell, the quantity `analyze` estimates.
    #[serde(rename = "true_rate_Hz")]
    true_rate_hz: f64,
    ionization_rate: f64,
    bright_count_rate: f64,
    dark_count_rate: f64,
    duration_s: f64,
    bin_width_s: f64,
    n_bins: usize,
}

/// splitmix64 of `(seed, index)`, so traces do not share random streams.
pub fn trace_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn scenarios(cfg: &SimulateConfig, config_path: &Path) -> CliResult<Vec<Scenario>> {
    match (&cfg.scenarios, &cfg.grid) {
        (Some(s), None) => {
            if s.is_empty() {
                return Err(Failure::config(anyhow!("'scenarios' is empty")));
            }
            Ok(s.clone())
        }
        (None, Some(g)) => grid_scenarios(g, config_path),
        _ => Err(Failure::config(anyhow!("give exactly one of 'scenarios' or 'grid'"))),
    }
}

fn grid_scenarios(g: &Grid, config_path: &Path) -> CliResult<Vec<Scenario>> {
    if g.wavelengths_nm.is_empty() || g.temperatures.is_empty() {
        return Err(Failure::config(anyhow!("grid needs at least one wavelength and one temperature")));
    }
    if !(g.flux.is_finite() && g.flux > 0.0) {
        return Err(Failure::config(anyhow!("grid flux must be > 0, got {}", g.flux)));
    }
    let path = relative_to(config_path, &g.modeset);
    let modes = load_modeset(&path)?;
    let model = EffectiveModeModel::new(&modes, g.limits).at("grid limits")?;
    let rates = model.rate_grid(&g.wavelengths_nm, &g.temperatures, g.zpl_nm).at("evaluating grid cross-sections")?;
    let gamma1 = g.sigma_prime.map_or(f64::INFINITY, |s| s * g.flux);
    rates
        .into_iter()
        .map(|(l, t, sigma)| {
            let chain = ChainSpec::new(sigma * g.flux, gamma1, g.relaxation)
                .at(format_args!("chain at λ = {} nm, T = {} K", l.value(), t.value()))?;
            Ok(Scenario {
                wavelength_nm: l,
                temperature: t,
                chain,
            })
        })
        .collect()
}

pub fn load_modeset(path: &Path) -> CliResult<ModeSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(anyhow!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(anyhow!("{}: {e}", path.display())))
}

fn exactly_one(a: Option<f64>, b: Option<f64>, names: (&str, &str)) -> CliResult<()> {
    if a.is_some() && b.is_some() {
        return Err(Failure::config(anyhow!("give only one of '{}' or '{}'", names.0, names.1)));
    }
    Ok(())
}

pub fn run(config_path: &Path, out_dir: &Path, seed_override: Option<u64>) -> CliResult<()> {
    let cfg: SimulateConfig = read_config(config_path, SIMULATE_SCHEMA)?;
    exactly_one(cfg.duration_s, cfg.target_dark_dwells, ("duration_s", "target_dark_dwells"))?;
    if cfg.duration_s.is_none() && cfg.target_dark_dwells.is_none() {
        return Err(Failure::config(anyhow!("one of 'duration_s' or 'target_dark_dwells' is required")));
    }
    exactly_one(cfg.bin_width_s, cfg.bins_per_dark_dwell, ("bin_width_s", "bins_per_dark_dwell"))?;
    let seed = seed_override.unwrap_or(cfg.seed);
    let scenarios = scenarios(&cfg, config_path)?;

    let mut cycles = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        let cycle = CycleSpec::new(s.chain, cfg.ionization_rate, cfg.bright_count_rate, cfg.dark_count_rate)
            .at(format_args!("cycle at λ = {} nm, T = {} K", s.wavelength_nm.value(), s.temperature.value()))?;
        let rate = mfpt_rate(&s.chain);
        let duration = match (cfg.duration_s, cfg.target_dark_dwells) {
            (Some(d), _) => d,
            (None, Some(n)) => n * (1.0 / rate + 1.0 / cfg.ionization_rate),
            (None, None) => unreachable!(),
        };
        let bin_width = cfg
            .bin_width_s
            .unwrap_or_else(|| 1.0 / (rate * cfg.bins_per_dark_dwell.unwrap_or(DEFAULT_BINS_PER_DARK_DWELL)));
        if !(duration > 0.0 && bin_width > 0.0) {
            return Err(Failure::config(anyhow!(
                "duration ({duration} s) and bin width ({bin_width} s) must be > 0"
            )));
        }
        if duration / bin_width > MAX_BINS {
            return Err(Failure::runtime(anyhow!(
                "λ = {} nm, T = {} K needs {:.3e} bins (limit {MAX_BINS:e}); widen the bins or shorten the trace",
                s.wavelength_nm.value(),
                s.temperature.value(),
                duration / bin_width
            )));
        }
        cycles.push((cycle, rate, duration, bin_width));
    }

    ensure_dir(out_dir)?;
    let width = scenarios.len().saturating_sub(1).to_string().len().max(3);
    let mut entries = Vec::with_capacity(scenarios.len());
    for (i, (s, (cycle, rate, duration, bin_width))) in scenarios.iter().zip(cycles).enumerate() {
        let trace_seed = trace_seed(seed, i as u64);
        let mut trace = simulate_blinking(&cycle, duration, bin_width, trace_seed).map_err(Failure::runtime)?;
        trace.metadata.wavelength = Some(s.wavelength_nm);
        trace.metadata.temperature = Some(s.temperature);
        let file = format!("trace_{i:0width$}.csv");
        write_file(&out_dir.join(&file), |w| trace.write_csv(w))?;
        info!("wrote {file}: {} bins, true rate {rate:.6e} Hz", trace.len());
        entries.push(ManifestEntry {
            file,
            wavelength_nm: s.wavelength_nm.value(),
            temperature_k: s.temperature.value(),
            seed: trace_seed,
            chain: s.chain,
            true_rate_hz: rate,
            ionization_rate: cfg.ionization_rate,
            bright_count_rate: cfg.bright_count_rate,
            dark_count_rate: cfg.dark_count_rate,
            duration_s: duration,
            bin_width_s: bin_width,
            n_bins: trace.len(),
        });
    }
    write_json(
        &out_dir.join("manifest.json"),
        &Manifest {
            schema: MANIFEST_SCHEMA,
            seed,
            traces: entries,
        },
    )
}
