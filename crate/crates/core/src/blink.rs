//! Threshold discrimination of bright/dark states in photon-count traces,
//! dwell extraction and the `R = 1/⟨t⟩` estimator.

use serde::{Deserialize, Serialize};

use crate::charge_cycle::{ChargeState, PhotonTrace};
use crate::error::{Error, Result};

pub use crate::rate_curve::{RateCurve, RatePoint};

pub const DEFAULT_MIN_DWELL_BINS: usize = 2;

/// Below this Ashman separation the two count classes are treated as one.
const MIN_ASHMAN_D: f64 = 3.0;
/// The histogram between the two modes must dip below this fraction of the
/// smaller modal height.
const MAX_VALLEY_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdMethod {
    #[default]
    /// Otsu split of the count histogram, then the midpoint between the
    /// modal count of each class.
    Bimodal,
    Fixed { value: f64 },
}

pub fn choose_threshold(trace: &PhotonTrace, method: ThresholdMethod) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::Analysis("empty trace".into()));
    }
    match method {
        ThresholdMethod::Fixed { value } => Ok(value),
        ThresholdMethod::Bimodal => bimodal_threshold(trace.counts()),
    }
}

fn bimodal_threshold(counts: &[u64]) -> Result<f64> {
    let indistinguishable = || Error::Analysis("states indistinguishable: count histogram is not bimodal".into());
    let max = *counts.iter().max().expect("non-empty") as usize;
    let mut hist = vec![0u64; max + 1];
    for &c in counts {
        hist[c as usize] += 1;
    }
    let n = counts.len() as f64;
    let total: f64 = hist.iter().enumerate().map(|(k, &h)| k as f64 * h as f64).sum();

    let mut best: Option<(usize, f64)> = None;
    let (mut w0, mut s0) = (0.0, 0.0);
    for (k, &h) in hist.iter().enumerate().take(max) {
        w0 += h as f64;
        s0 += k as f64 * h as f64;
        let w1 = n - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let between = w0 * w1 * (s0 / w0 - (total - s0) / w1).powi(2);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((k, between));
        }
    }
    let (split, _) = best.ok_or_else(indistinguishable)?;

    let class_stats = |range: std::ops::Range<usize>| {
        let (mut w, mut s, mut s2) = (0.0, 0.0, 0.0);
        let (mut mode, mut peak) = (range.start, 0u64);
        for k in range {
            let h = hist[k];
            let (x, hf) = (k as f64, h as f64);
            w += hf;
            s += x * hf;
            s2 += x * x * hf;
            if h > peak {
                mode = k;
                peak = h;
            }
        }
        let mean = s / w;
        (mean, (s2 / w - mean * mean).max(0.0), mode, peak)
    };
    let (mean0, var0, mode0, peak0) = class_stats(0..split + 1);
    let (mean1, var1, mode1, peak1) = class_stats(split + 1..max + 1);

    let ashman = if var0 + var1 > 0.0 {
        std::f64::consts::SQRT_2 * (mean1 - mean0).abs() / (var0 + var1).sqrt()
    } else {
        f64::INFINITY
    };
    let valley = hist[mode0 + 1..mode1].iter().copied().min();
    let dips = valley.is_some_and(|v| (v as f64) < MAX_VALLEY_RATIO * peak0.min(peak1) as f64);
    if ashman < MIN_ASHMAN_D || !dips {
        return Err(indistinguishable());
    }
    Ok(0.5 * (mode0 + mode1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellRecord {
    pub state: ChargeState,
    pub duration_s: f64,
    pub start_bin: usize,
    pub n_bins: usize,
}

/// Runs of bins above (bright) or at/below (dark) `threshold`. Runs shorter
/// than `min_dwell_bins` are absorbed into the preceding run; the first and
/// last runs are censored and dropped.
pub fn extract_dwells(trace: &PhotonTrace, threshold: f64, min_dwell_bins: usize) -> Vec<DwellRecord> {
    let classify = |c: u64| if c as f64 > threshold { ChargeState::Bright } else { ChargeState::Dark };
    let mut runs: Vec<(ChargeState, usize, usize)> = Vec::new();
    for (i, &c) in trace.counts().iter().enumerate() {
        let s = classify(c);
        match runs.last_mut() {
            Some((state, _, len)) if *state == s => *len += 1,
            _ => runs.push((s, i, 1)),
        }
    }

    let mut merged: Vec<(ChargeState, usize, usize)> = Vec::with_capacity(runs.len());
    for (state, start, len) in runs {
        match merged.last_mut() {
            Some(prev) if len < min_dwell_bins || prev.0 == state => prev.2 += len,
            _ => merged.push((state, start, len)),
        }
    }
    // a short leading run has nothing before it to join; fold it forward
    if merged.len() >= 2 && merged[0].2 < min_dwell_bins {
        let (_, start, len) = merged.remove(0);
        merged[0].1 = start;
        merged[0].2 += len;
    }

    if merged.len() <= 2 {
        return Vec::new();
    }
    let bw = trace.bin_width_s();
    merged[1..merged.len() - 1]
        .iter()
        .map(|&(state, start_bin, n_bins)| DwellRecord {
            state,
            duration_s: n_bins as f64 * bw,
            start_bin,
            n_bins,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate_hz: f64,
    pub stderr_hz: f64,
    pub n_dwells: usize,
}

/// `1/⟨t⟩` over dwells of `state`, with delta-method standard error
/// `R² · s/√n`.
pub fn estimate_rate(dwells: &[DwellRecord], state: ChargeState) -> Result<RateEstimate> {
    let d: Vec<f64> = dwells.iter().filter(|r| r.state == state).map(|r| r.duration_s).collect();
    if d.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} {state:?} dwell(s); at least 2 are needed for a rate estimate",
            d.len()
        )));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let rate = 1.0 / mean;
    Ok(RateEstimate {
        rate_hz: rate,
        stderr_hz: rate * rate * (var / n).sqrt(),
        n_dwells: d.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub threshold: ThresholdMethod,
    pub min_dwell_bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            threshold: ThresholdMethod::Bimodal,
            min_dwell_bins: DEFAULT_MIN_DWELL_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceAnalysis {
    pub threshold: f64,
    pub dwells: Vec<DwellRecord>,
    pub dark: RateEstimate,
}

/// Threshold, dwell extraction and dark-state rate in one pass.
pub fn analyze_trace(trace: &PhotonTrace, config: &AnalysisConfig) -> Result<TraceAnalysis> {
    let threshold = choose_threshold(trace, config.threshold)?;
    let dwells = extract_dwells(trace, threshold, config.min_dwell_bins);
    let dark = estimate_rate(&dwells, ChargeState::Dark)?;
    Ok(TraceAnalysis { threshold, dwells, dark })
}
