//! Three-state charge-cycle chain and synthetic blinking traces.
//!
//! States are 0 (NV⁰ ground), 1 (NV⁰ excited) and 2 (NV⁻). The chain leaves
//! 0 at `γ₀`, and from 1 either reaches 2 at `γ₁` or relaxes back to 0 at
//! `μ₁`. The mean first passage 0 → 2 is `(γ₀ + γ₁ + μ₁)/(γ₀γ₁)`.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{TemperatureK, WavelengthNm};

pub const TRACE_SCHEMA: &str = "trace/v1";
pub const TRACE_HEADER: [&str; 2] = ["t_s", "counts"];

const TRIALS_PER_STREAM: u64 = 1 << 16;
const COUNT_STREAM: u64 = 1;
const DWELL_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChain", into = "RawChain")]
pub struct ChainSpec {
    gamma0: f64,
    gamma1: f64,
    mu1: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    gamma0: f64,
    /// `null` in JSON means an instantaneous second step.
    gamma1: Option<f64>,
    mu1: f64,
}

impl TryFrom<RawChain> for ChainSpec {
    type Error = Error;
    fn try_from(r: RawChain) -> Result<Self> {
        ChainSpec::new(r.gamma0, r.gamma1.unwrap_or(f64::INFINITY), r.mu1)
    }
}

impl From<ChainSpec> for RawChain {
    fn from(c: ChainSpec) -> Self {
        RawChain {
            gamma0: c.gamma0,
            gamma1: c.gamma1.is_finite().then_some(c.gamma1),
            mu1: c.mu1,
        }
    }
}

impl ChainSpec {
    /// `gamma1` may be `f64::INFINITY`.
    pub fn new(gamma0: f64, gamma1: f64, mu1: f64) -> Result<Self> {
        if !(gamma0.is_finite() && gamma0 > 0.0) {
            return Err(Error::Validation(format!("gamma0 must be finite and > 0, got {gamma0}")));
        }
        if !(gamma1 > 0.0) {
            return Err(Error::Validation(format!("gamma1 must be > 0, got {gamma1}")));
        }
        if !(mu1.is_finite() && mu1 >= 0.0) {
            return Err(Error::Validation(format!("mu1 must be finite and >= 0, got {mu1}")));
        }
        Ok(ChainSpec { gamma0, gamma1, mu1 })
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn mu1(&self) -> f64 {
        self.mu1
    }
}

/// Effective 0 → 2 rate `γ₀γ₁/(γ₀ + γ₁ + μ₁)`.
pub fn mfpt_rate(chain: &ChainSpec) -> f64 {
    let ChainSpec { gamma0, gamma1, mu1 } = *chain;
    if gamma1.is_infinite() {
        return gamma0;
    }
    gamma0 * gamma1 / (gamma0 + gamma1 + mu1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Photophysics {
    pub sigma: f64,
    pub sigma_prime: f64,
    #[serde(rename = "L")]
    pub relaxation: f64,
    pub flux: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotophysicalRate {
    /// `σΦ / (1 + L/(σ′Φ))`.
    pub approximate: f64,
    /// `σΦ / (σ/σ′ + 1 + L/(σ′Φ))`.
    pub exact: f64,
}

pub fn rate_from_photophysics(p: &Photophysics) -> Result<PhotophysicalRate> {
    if !(p.flux.is_finite() && p.flux > 0.0) {
        return Err(Error::Domain(format!("photon flux must be > 0, got {}", p.flux)));
    }
    if !(p.sigma_prime.is_finite() && p.sigma_prime > 0.0) {
        return Err(Error::Domain(format!("sigma_prime must be > 0, got {}", p.sigma_prime)));
    }
    for (name, v) in [("sigma", p.sigma), ("L", p.relaxation)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Domain(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    let pumped = p.sigma * p.flux;
    let competition = p.relaxation / (p.sigma_prime * p.flux);
    Ok(PhotophysicalRate {
        approximate: pumped / (1.0 + competition),
        exact: pumped / (p.sigma / p.sigma_prime + 1.0 + competition),
    })
}

/// The chain implied by the photophysical rates: `γ₀ = σΦ`, `γ₁ = σ′Φ`, `μ₁ = L`.
pub fn chain_from_photophysics(p: &Photophysics) -> Result<ChainSpec> {
    ChainSpec::new(p.sigma * p.flux, p.sigma_prime * p.flux, p.relaxation)
}

/// Draws one 0 → 2 passage time.
///
/// The number of 1 → 0 relapses is geometric, so the passage is a sum of
/// `k+1` waits at rate `γ₀` and `k+1` waits at rate `γ₁ + μ₁`, each sum
/// being Gamma distributed.
#[derive(Debug, Clone, Copy)]
pub struct PassageSampler {
    relapses: Option<Geometric>,
    gamma0: f64,
    exit1: f64,
}

impl PassageSampler {
    pub fn new(chain: &ChainSpec) -> Self {
        let exit1 = chain.gamma1 + chain.mu1;
        let relapses = (chain.gamma1.is_finite() && chain.mu1 > 0.0)
            .then(|| Geometric::new(chain.gamma1 / exit1).expect("escape probability in (0, 1]"));
        PassageSampler {
            relapses,
            gamma0: chain.gamma0,
            exit1,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let visits = 1 + self.relapses.map_or(0, |g| g.sample(rng));
        let wait = |rate: f64, rng: &mut R| -> f64 {
            if visits == 1 {
                Exp::new(rate).expect("positive rate").sample(rng)
            } else {
                Gamma::new(visits as f64, 1.0 / rate).expect("positive shape").sample(rng)
            }
        };
        let mut t = wait(self.gamma0, rng);
        if self.exit1.is_finite() {
            t += wait(self.exit1, rng);
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageEstimate {
    pub mean_s: f64,
    pub stderr_s: f64,
}

/// Monte Carlo mean 0 → 2 passage time. Trials are split into fixed-size
/// blocks, each with its own ChaCha8 stream, so the result depends only on
/// `seed` and `trials`.
pub fn simulate_first_passage(chain: &ChainSpec, trials: u64, seed: u64) -> Result<PassageEstimate> {
    if trials == 0 {
        return Err(Error::Validation("trials must be >= 1".into()));
    }
    let sampler = PassageSampler::new(chain);
    let blocks = trials.div_ceil(TRIALS_PER_STREAM);
    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let n = TRIALS_PER_STREAM.min(trials - b * TRIALS_PER_STREAM);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..n {
                let t = sampler.sample(&mut rng);
                s += t;
                s2 += t * t;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let n = trials as f64;
    let mean = s / n;
    let var = if trials > 1 { ((s2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(PassageEstimate {
        mean_s: mean,
        stderr_s: (var / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSpec {
    pub chain: ChainSpec,
    /// NV⁻ → NV⁰ rate; inverse mean bright dwell.
    pub ionization_rate: f64,
    pub bright_count_rate: f64,
    pub dark_count_rate: f64,
}

impl CycleSpec {
    pub fn new(chain: ChainSpec, ionization_rate: f64, bright_count_rate: f64, dark_count_rate: f64) -> Result<Self> {
        let c = CycleSpec {
            chain,
            ionization_rate,
            bright_count_rate,
            dark_count_rate,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ionization_rate.is_finite() && self.ionization_rate > 0.0) {
            return Err(Error::Validation(format!("ionization_rate must be > 0, got {}", self.ionization_rate)));
        }
        if !(self.dark_count_rate.is_finite() && self.dark_count_rate >= 0.0) {
            return Err(Error::Validation(format!("dark_count_rate must be >= 0, got {}", self.dark_count_rate)));
        }
        if !(self.bright_count_rate.is_finite() && self.bright_count_rate >= self.dark_count_rate) {
            return Err(Error::Validation(format!(
                "bright_count_rate ({}) must be >= dark_count_rate ({})",
                self.bright_count_rate, self.dark_count_rate
            )));
        }
        Ok(())
    }

    /// Long-run fraction of time spent dark.
    pub fn dark_fraction(&self) -> f64 {
        let dark = 1.0 / mfpt_rate(&self.chain);
        dark / (dark + 1.0 / self.ionization_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChargeState {
    Bright,
    Dark,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceMetadata {
    pub wavelength: Option<WavelengthNm>,
    pub temperature: Option<TemperatureK>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotonTrace {
    bin_width_s: f64,
    counts: Vec<u64>,
    true_state: Option<Vec<ChargeState>>,
    pub metadata: TraceMetadata,
}

impl PhotonTrace {
    pub fn new(bin_width_s: f64, counts: Vec<u64>) -> Result<Self> {
        if !(bin_width_s.is_finite() && bin_width_s > 0.0) {
            return Err(Error::Validation(format!("bin_width_s must be > 0, got {bin_width_s}")));
        }
        Ok(PhotonTrace {
            bin_width_s,
            counts,
            true_state: None,
            metadata: TraceMetadata::default(),
        })
    }

    pub fn bin_width_s(&self) -> f64 {
        self.bin_width_s
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.counts.len() as f64 * self.bin_width_s
    }

    /// Majority state of each bin, available for simulated traces only.
    pub fn true_state_per_bin(&self) -> Option<&[ChargeState]> {
        self.true_state.as_deref()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        let io = |e| Error::io("<trace>", e);
        writeln!(out, "# schema={TRACE_SCHEMA}").map_err(io)?;
        writeln!(out, "# bin_width_s={}", self.bin_width_s).map_err(io)?;
        if let Some(l) = self.metadata.wavelength {
            writeln!(out, "# wavelength_nm={}", l.value()).map_err(io)?;
        }
        if let Some(t) = self.metadata.temperature {
            writeln!(out, "# temperature_K={}", t.value()).map_err(io)?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER).map_err(Error::from_csv)?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record(&[(i as f64 * self.bin_width_s).to_string(), c.to_string()])
                .map_err(Error::from_csv)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut text = String::new();
        std::io::BufReader::new(input)
            .read_to_string(&mut text)
            .map_err(|e| Error::io("<trace>", e))?;
        let mut bin_width = None;
        let mut metadata = TraceMetadata::default();
        for (i, line) in text.as_bytes().lines().enumerate() {
            let line = line.map_err(|e| Error::io("<trace>", e))?;
            let Some(comment) = line.trim().strip_prefix('#') else { continue };
            let Some((key, value)) = comment.split_once('=') else { continue };
            let lineno = i as u64 + 1;
            let num = |v: &str| -> Result<f64> {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("{}: {e}", key.trim()),
                })
            };
            let at_line = |e: Error| Error::Parse {
                line: lineno,
                message: e.to_string(),
            };
            match key.trim() {
                "bin_width_s" => bin_width = Some(num(value)?),
                "wavelength_nm" => metadata.wavelength = Some(WavelengthNm::new(num(value)?).map_err(at_line)?),
                "temperature_K" => metadata.temperature = Some(TemperatureK::new(num(value)?).map_err(at_line)?),
                "schema" if value.trim() != TRACE_SCHEMA => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("unsupported schema '{}', expected {TRACE_SCHEMA}", value.trim()),
                    })
                }
                _ => {}
            }
        }
        let bin_width = bin_width.ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing '# bin_width_s=' comment".into(),
        })?;

        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(Error::from_csv)?.clone();
        if headers.iter().collect::<Vec<_>>() != TRACE_HEADER {
            return Err(Error::Parse {
                line: headers.position().map(|p| p.line()).unwrap_or(1),
                message: format!("expected header '{}'", TRACE_HEADER.join(",")),
            });
        }
        let mut counts = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(Error::from_csv)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            rec[0].parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("column 't_s': {e}"),
            })?;
            counts.push(rec[1].parse::<u64>().map_err(|e| Error::Parse {
                line,
                message: format!("column 'counts': {e}"),
            })?);
        }
        let mut trace = PhotonTrace::new(bin_width, counts)?;
        trace.metadata = metadata;
        Ok(trace)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        PhotonTrace::read_csv(f)
    }
}

/// Alternating bright/dark record starting bright at `t = 0`. Dark dwells are
/// chain first passages, bright dwells exponential at the ionization rate.
/// Each bin gets Poisson counts at the time-weighted mean intensity.
pub fn simulate_blinking(cycle: &CycleSpec, duration_s: f64, bin_width_s: f64, seed: u64) -> Result<PhotonTrace> {
    cycle.validate()?;
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::Validation(format!("duration_s must be > 0, got {duration_s}")));
    }
    if !(bin_width_s.is_finite() && bin_width_s > 0.0) {
        return Err(Error::Validation(format!("bin_width_s must be > 0, got {bin_width_s}")));
    }
    let n_bins = ((duration_s / bin_width_s).round() as usize).max(1);
    let end = n_bins as f64 * bin_width_s;

    let mut dwell_rng = ChaCha8Rng::seed_from_u64(seed);
    dwell_rng.set_stream(DWELL_STREAM);
    let mut count_rng = ChaCha8Rng::seed_from_u64(seed);
    count_rng.set_stream(COUNT_STREAM);

    let passage = PassageSampler::new(&cycle.chain);
    let ionization = Exp::new(cycle.ionization_rate).expect("validated rate");

    let mut bright_time = vec![0.0f64; n_bins];
    let mut t = 0.0;
    let mut state = ChargeState::Bright;
    while t < end {
        let dwell = match state {
            ChargeState::Bright => ionization.sample(&mut dwell_rng),
            ChargeState::Dark => passage.sample(&mut dwell_rng),
        };
        let stop = (t + dwell).min(end);
        if state == ChargeState::Bright {
            let first = (t / bin_width_s) as usize;
            let last = ((stop / bin_width_s) as usize).min(n_bins - 1);
            for (b, slot) in bright_time.iter_mut().enumerate().take(last + 1).skip(first) {
                let lo = (b as f64 * bin_width_s).max(t);
                let hi = ((b + 1) as f64 * bin_width_s).min(stop);
                if hi > lo {
                    *slot += hi - lo;
                }
            }
        }
        t += dwell;
        state = match state {
            ChargeState::Bright => ChargeState::Dark,
            ChargeState::Dark => ChargeState::Bright,
        };
    }

    let mut counts = Vec::with_capacity(n_bins);
    let mut truth = Vec::with_capacity(n_bins);
    for &tb in &bright_time {
        let tb = tb.clamp(0.0, bin_width_s);
        let mean = cycle.bright_count_rate * tb + cycle.dark_count_rate * (bin_width_s - tb);
        let c = if mean > 0.0 {
            Poisson::new(mean).map_err(|e| Error::Numeric(format!("Poisson mean {mean}: {e}")))?.sample(&mut count_rng) as u64
        } else {
            0
        };
        counts.push(c);
        truth.push(if 2.0 * tb >= bin_width_s { ChargeState::Bright } else { ChargeState::Dark });
    }
    let mut trace = PhotonTrace::new(bin_width_s, counts)?;
    trace.true_state = Some(truth);
    Ok(trace)
}
