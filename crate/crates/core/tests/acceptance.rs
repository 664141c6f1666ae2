//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). A failing criterion is
//! reported but does not fail the process unless `ACCEPTANCE_STRICT=1`.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use phonocycle::blink::{analyze_trace, AnalysisConfig};
use phonocycle::charge_cycle::{
    mfpt_rate, rate_from_photophysics, simulate_blinking, simulate_first_passage, ChainSpec, CycleSpec, Photophysics,
};
use phonocycle::effective_mode::{EffectiveModeModel, EnumerationLimits, ModeSet};
use phonocycle::fitting::{default_params, fit, FitModel, FitProblem, LossSpace, OptimizerConfig, ParamSpec, GAMMA};
use phonocycle::franck_condon::{fc_overlap_sq, numeric_overlap_oracle, PhononMode, QuadratureSpec};
use phonocycle::lattice::{build_dynamical_matrix, project_displacement, solve_modes, DisplacementField, ToyLattice};
use phonocycle::quasi_continuum::{qc_rate_per_power, EmissionSpectrum, QuasiContinuumParams};
use phonocycle::rate_curve::{RateCurve, RatePoint};
use phonocycle::units::{
    detuning_below_zpl, EnergyMeV, PhysicalConstants, TemperatureK, WavelengthNm, HBAR_OMEGA_UNIT_MEV, NV0_ZPL_NM,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn wl(nm: f64) -> WavelengthNm {
    WavelengthNm::new(nm).unwrap()
}

fn temp(k: f64) -> TemperatureK {
    TemperatureK::new(k).unwrap()
}

fn zpl() -> WavelengthNm {
    wl(NV0_ZPL_NM)
}

fn reference_modes(s1: f64, s2: f64, fwhm: f64) -> ModeSet {
    ModeSet::new(
        vec![
            PhononMode::new("qlvr", EnergyMeV(43.0), s1).unwrap(),
            PhononMode::new("acoustic", EnergyMeV(9.0), s2).unwrap(),
        ],
        EnergyMeV(fwhm),
        1.0,
    )
    .unwrap()
}

fn wavelength_grid() -> Vec<WavelengthNm> {
    (0..=20).map(|i| wl(580.0 + i as f64)).collect()
}

const FIG_TEMPS: [f64; 3] = [100.0, 200.0, 300.0];

fn fc_quadrature() -> Outcome {
    let spec = QuadratureSpec::default();
    let mut worst: f64 = 0.0;
    for s in [0.0, 0.3, 0.7, 1.3, 2.0] {
        for ng in 0..=5 {
            for ne in 0..=5 {
                let a = fc_overlap_sq(s, ng, ne).unwrap();
                let b = numeric_overlap_oracle(s, ng, ne, &spec).unwrap();
                worst = worst.max((a - b).abs());
            }
        }
    }
    outcome(worst <= 1e-8, format!("max |analytic - quadrature| = {worst:.2e} (tol 1e-8)"))
}

fn fc_completeness() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in [0.0, 0.3, 0.7, 1.0, 1.3, 2.0] {
        for ng in 0..=3u32 {
            let sum: f64 = (0..=ng + 40).map(|ne| fc_overlap_sq(s, ng, ne).unwrap()).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    outcome(worst <= 1e-6, format!("max |Σ_ne |⟨n_g|n_e⟩|² - 1| = {worst:.2e} (tol 1e-6)"))
}

fn mfpt_monte_carlo() -> Outcome {
    let values = [0.1, 1.0, 10.0];
    let mut worst_z: f64 = 0.0;
    let mut misses = Vec::new();
    let mut seed = 20_240;
    for &g0 in &values {
        for &g1 in &values {
            for &mu in &[0.0, 1.0, 10.0] {
                let chain = ChainSpec::new(g0, g1, mu).unwrap();
                let est = simulate_first_passage(&chain, 1_000_000, seed).unwrap();
                seed += 1;
                let z = (est.mean_s - 1.0 / mfpt_rate(&chain)).abs() / est.stderr_s;
                worst_z = worst_z.max(z);
                if z > 3.0 {
                    misses.push(format!("({g0}, {g1}, {mu}): z = {z:.2}"));
                }
            }
        }
    }
    outcome(
        misses.is_empty(),
        format!("27 chains x 1e6 trials, max |z| = {worst_z:.2} (tol 3){}", list(&misses)),
    )
}

fn list(items: &[String]) -> String {
    if items.is_empty() {
        String::new()
    } else {
        format!("; failing: {}", items.join(", "))
    }
}

fn photophysics_gap() -> Outcome {
    let mut worst_ratio: f64 = 0.0;
    for ratio in [1e-3, 1e-6] {
        for flux in [1e-2, 1.0, 1e3] {
            for l in [0.0, 0.5, 50.0] {
                let sigma_prime = 2.0;
                let r = rate_from_photophysics(&Photophysics {
                    sigma: ratio * sigma_prime,
                    sigma_prime,
                    relaxation: l,
                    flux,
                })
                .unwrap();
                let gap = (r.approximate - r.exact).abs() / r.exact;
                worst_ratio = worst_ratio.max(gap / ratio);
            }
        }
    }
    outcome(
        worst_ratio <= 1.0,
        format!("max relative gap / (σ/σ′) = {worst_ratio:.6} (must be <= 1)"),
    )
}

fn blinking_round_trip() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (i, r) in [0.05, 0.2, 1.0, 5.0].into_iter().enumerate() {
        let bin = 0.002 / r;
        let cycle = CycleSpec::new(ChainSpec::new(r, f64::INFINITY, 0.0).unwrap(), 5.0 * r, 100.0 / bin, 5.0 / bin).unwrap();
        let duration = 400.0 * (1.0 / r + 1.0 / (5.0 * r));
        let trace = simulate_blinking(&cycle, duration, bin, 900 + i as u64).unwrap();
        match analyze_trace(&trace, &AnalysisConfig::default()) {
            Ok(a) => {
                let z = (a.dark.rate_hz - r) / a.dark.stderr_hz;
                let ok = z.abs() <= 3.0 && a.dark.n_dwells >= 300;
                pass &= ok;
                notes.push(format!("R={r}: {:.4} ± {:.4} ({} dwells, z={z:.2})", a.dark.rate_hz, a.dark.stderr_hz, a.dark.n_dwells));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("R={r}: {e}"));
            }
        }
    }
    outcome(pass, notes.join("; "))
}

fn random_spectrum(rng: &mut ChaCha8Rng, strictly_positive: bool) -> EmissionSpectrum {
    let n = rng.random_range(5..40);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..200.0)).collect();
    x.push(0.0);
    x.push(250.0);
    x.sort_by(f64::total_cmp);
    x.dedup();
    let floor = if strictly_positive { 1e-3 } else { 0.0 };
    let samples = x
        .into_iter()
        .map(|e| {
            let y = if !strictly_positive && rng.random_bool(0.2) { 0.0 } else { rng.random_range(floor..1.0) };
            (e, y)
        })
        .collect();
    EmissionSpectrum::new(samples, "random").unwrap()
}

fn quasi_continuum() -> Outcome {
    let params = QuasiContinuumParams::new(1.0, zpl()).unwrap();
    let c = PhysicalConstants::CODATA;
    // narrow triangular spike at 30 meV
    let (e0, h, a) = (30.0, 0.5, 4.0);
    let spike = EmissionSpectrum::new(vec![(e0 - h, 0.0), (e0, a), (e0 + h, 0.0)], "spike").unwrap();
    let mut worst_closed: f64 = 0.0;
    for t in [50.0, 150.0, 300.0] {
        let kt = c.thermal_energy(temp(t));
        for lambda in [576.0, 578.0, 580.0] {
            let got = qc_rate_per_power(wl(lambda), temp(t), &spike, &params).unwrap();
            let d = detuning_below_zpl(wl(lambda), zpl()).unwrap().0;
            assert!(d < e0 - h);
            let want = common::linear_exp_integral(e0 - h, 0.0, e0, a, kt) + common::linear_exp_integral(e0, a, e0 + h, 0.0, kt);
            worst_closed = worst_closed.max((got / want - 1.0).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut violations = 0;
    let lambdas = wavelength_grid();
    for _ in 0..100 {
        let spec = random_spectrum(&mut rng, false);
        let mut prev_t: Option<Vec<f64>> = None;
        for t in [4.0, 100.0, 200.0, 300.0] {
            let rates: Vec<f64> = lambdas.iter().map(|&l| qc_rate_per_power(l, temp(t), &spec, &params).unwrap()).collect();
            if rates.windows(2).any(|w| w[1] > w[0]) {
                violations += 1;
            }
            if let Some(p) = &prev_t {
                if p.iter().zip(&rates).any(|(a, b)| b < a) {
                    violations += 1;
                }
            }
            prev_t = Some(rates);
        }
    }
    outcome(
        worst_closed <= 1e-10 && violations == 0,
        format!("spike closed form max rel err {worst_closed:.2e} (tol 1e-10); monotonicity violations on 100 random spectra: {violations}"),
    )
}

fn pruning_vs_brute_force() -> Outcome {
    let modes = reference_modes(0.3, 0.5, 5.0);
    let limits = EnumerationLimits::default();
    let model = EffectiveModeModel::new(&modes, limits).unwrap();
    let c = PhysicalConstants::CODATA;
    let pairs = [(43.0, 0.3), (9.0, 0.5)];
    let mut worst: f64 = 0.0;
    for t in FIG_TEMPS {
        for i in 0..11 {
            let lambda = wl(580.0 + 2.0 * i as f64);
            let d = detuning_below_zpl(lambda, zpl()).unwrap().0;
            let pruned = model.rate_per_power(lambda, temp(t), zpl()).unwrap();
            let brute = common::brute_force_rate(
                &pairs,
                5.0,
                limits.lorentzian_window_halfwidths,
                limits.max_quanta_per_mode,
                d,
                c.thermal_energy(temp(t)),
                1.0,
            );
            worst = worst.max((pruned / brute - 1.0).abs());
        }
    }
    outcome(worst <= 1e-6, format!("max rel diff pruned vs brute force = {worst:.2e} over 3 T x 11 λ (tol 1e-6)"))
}

fn low_temperature_quench() -> Outcome {
    let model = EffectiveModeModel::new(&reference_modes(0.3, 0.5, 5.0), EnumerationLimits::default()).unwrap();
    let mut worst = (0.0f64, 0.0);
    for d in (10..=100).step_by(5).map(f64::from) {
        let cold = model.rate_at_detuning(d, temp(4.0));
        let warm = model.rate_at_detuning(d, temp(300.0));
        let ratio = cold / warm;
        if ratio > worst.0 {
            worst = (ratio, d);
        }
    }
    outcome(
        worst.0 < 1e-6,
        format!(
            "max R(4 K)/R(300 K) = {:.3e} at Δ = {} meV (need < 1e-6); S = (0.3, 0.5), Γ = 5 meV",
            worst.0, worst.1
        ),
    )
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn figure_shape() -> Outcome {
    let lambdas = wavelength_grid();
    let temps: Vec<TemperatureK> = FIG_TEMPS.iter().map(|&t| temp(t)).collect();
    let shape_ok = |rows: &[Vec<f64>]| -> (bool, bool) {
        let in_l = rows.iter().all(|r| strictly_decreasing(r));
        let in_t = (0..rows[0].len()).all(|j| rows.windows(2).all(|w| w[1][j] > w[0][j]));
        (in_l, in_t)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let params = QuasiContinuumParams::new(1.0, zpl()).unwrap();
    let mut qc_fail = 0;
    for _ in 0..100 {
        let spec = random_spectrum(&mut rng, true);
        let rows: Vec<Vec<f64>> = temps
            .iter()
            .map(|&t| lambdas.iter().map(|&l| qc_rate_per_power(l, t, &spec, &params).unwrap()).collect())
            .collect();
        let (a, b) = shape_ok(&rows);
        qc_fail += usize::from(!(a && b));
    }

    let em_rows = |m: &ModeSet| -> Vec<Vec<f64>> {
        let model = EffectiveModeModel::new(m, EnumerationLimits::default()).unwrap();
        temps
            .iter()
            .map(|&t| lambdas.iter().map(|&l| model.rate_per_power(l, t, zpl()).unwrap()).collect())
            .collect()
    };
    let (ref_l, ref_t) = shape_ok(&em_rows(&reference_modes(0.3, 0.5, 5.0)));

    let (mut em_fail_l, mut em_fail_t) = (0, 0);
    for _ in 0..40 {
        let n = rng.random_range(1..=2);
        let modes = (0..n)
            .map(|k| PhononMode::new(format!("m{k}"), EnergyMeV(rng.random_range(5.0..70.0)), rng.random_range(0.0..2.0)).unwrap())
            .collect();
        let set = ModeSet::new(modes, EnergyMeV(rng.random_range(1.0..15.0)), 1.0).unwrap();
        let (a, b) = shape_ok(&em_rows(&set));
        em_fail_l += usize::from(!a);
        em_fail_t += usize::from(!b);
    }
    outcome(
        qc_fail == 0 && ref_l && ref_t && em_fail_l == 0 && em_fail_t == 0,
        format!(
            "quasi-continuum: {qc_fail}/100 random spectra off-shape; effective-mode reference modes: λ {} T {}; \
             random mode sets off-shape in λ: {em_fail_l}/40, in T: {em_fail_t}/40",
            if ref_l { "ok" } else { "FAIL" },
            if ref_t { "ok" } else { "FAIL" },
        ),
    )
}

fn synthetic_fit_data(seed: u64) -> RateCurve {
    let model = EffectiveModeModel::new(&reference_modes(0.3, 0.5, 5.0), EnumerationLimits::default()).unwrap();
    let lambdas: Vec<WavelengthNm> = (0..11).map(|i| wl(580.0 + 2.0 * i as f64)).collect();
    let temps: Vec<TemperatureK> = FIG_TEMPS.iter().map(|&t| temp(t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = model
        .rate_grid(&lambdas, &temps, zpl())
        .unwrap()
        .into_iter()
        .map(|(l, t, r)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            RatePoint::new(l, t, r * 1e4 * (1.0 + 0.05 * z), 0.0, 0).unwrap()
        })
        .collect();
    RateCurve::new(points).unwrap()
}

fn em_fit_model(energies: &[f64]) -> FitModel {
    FitModel::EffectiveMode {
        energies: energies.iter().map(|&e| EnergyMeV(e)).collect(),
        zpl: zpl(),
        limits: EnumerationLimits::default(),
    }
}

fn shared_params(model: &FitModel) -> Vec<ParamSpec> {
    default_params(model)
        .into_iter()
        .map(|p| ParamSpec {
            per_temperature: false,
            ..p
        })
        .collect()
}

fn fit_round_trip() -> Outcome {
    let cfg = OptimizerConfig::default();
    let mut pass = true;
    let mut notes = Vec::new();
    for seed in [1, 2, 3] {
        let data = synthetic_fit_data(seed);
        let two = em_fit_model(&[43.0, 9.0]);
        let one = em_fit_model(&[43.0]);
        let r2 = fit(&FitProblem::new(data.clone(), two.clone(), shared_params(&two), LossSpace::LogRate).unwrap(), &cfg).unwrap();
        let r1 = fit(&FitProblem::new(data, one.clone(), shared_params(&one), LossSpace::LogRate).unwrap(), &cfg).unwrap();
        let (s1, s2, g) = (
            r2.value("S1", None).unwrap(),
            r2.value("S2", None).unwrap(),
            r2.value(GAMMA, None).unwrap(),
        );
        let ok = (s1 / 0.3 - 1.0).abs() <= 0.1
            && (s2 / 0.5 - 1.0).abs() <= 0.1
            && (g / 5.0 - 1.0).abs() <= 0.2
            && r1.loss > r2.loss;
        pass &= ok;
        notes.push(format!(
            "seed {seed}: S1={s1:.3} S2={s2:.3} Γ={g:.2} loss 2-mode {:.3e} < 1-mode {:.3e}",
            r2.loss, r1.loss
        ));
    }
    outcome(pass, notes.join("; "))
}

fn lattice_chain() -> Outcome {
    let (n, m, k, a) = (64, 12.0, 20.0, 1.5);
    let lat = ToyLattice::periodic_chain(n, m, k, a).unwrap();
    let modes = solve_modes(&build_dynamical_matrix(&lat).unwrap()).unwrap();
    let mut got: Vec<f64> = (0..n).map(|i| modes.omega(i)).collect();
    let mut want: Vec<f64> = (0..n)
        .map(|j| {
            let q = 2.0 * std::f64::consts::PI * j as f64 / (n as f64 * a);
            2.0 * (k / m).sqrt() * (q * a / 2.0).sin().abs()
        })
        .collect();
    got.sort_by(f64::total_cmp);
    want.sort_by(f64::total_cmp);
    let disp = got.iter().zip(&want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    let zeros = modes.n_zero_modes();

    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let field = DisplacementField::new((0..n).map(|_| vec![rng.random_range(-0.05..0.05)]).collect()).unwrap();
    let dq = project_displacement(&modes, &lat, &field).unwrap();
    let lhs: f64 = dq.iter().map(|q| q * q).sum();
    let rhs: f64 = field.delta_r.iter().map(|r| m * r[0] * r[0]).sum();
    let parseval = (lhs - rhs).abs() / rhs;
    outcome(
        disp <= 1e-8 && zeros == 1 && parseval <= 1e-10,
        format!(
            "N=64: max |ω - 2√(k/m)|sin(qa/2)|| = {disp:.2e} (ħω up to {:.2} meV), zero modes = {zeros}, Parseval rel err = {parseval:.2e}",
            HBAR_OMEGA_UNIT_MEV * got[n - 1]
        ),
    )
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "Franck–Condon vs quadrature", budget: Duration::from_secs(10), run: fc_quadrature },
        Criterion { id: 2, name: "Franck–Condon completeness", budget: Duration::from_secs(5), run: fc_completeness },
        Criterion { id: 3, name: "MFPT vs Monte Carlo", budget: Duration::from_secs(60), run: mfpt_monte_carlo },
        Criterion { id: 4, name: "photophysics approximation", budget: Duration::from_secs(1), run: photophysics_gap },
        Criterion { id: 5, name: "blinking round trip", budget: Duration::from_secs(120), run: blinking_round_trip },
        Criterion { id: 6, name: "quasi-continuum", budget: Duration::from_secs(10), run: quasi_continuum },
        Criterion { id: 7, name: "effective-mode pruning", budget: Duration::from_secs(120), run: pruning_vs_brute_force },
        Criterion { id: 8, name: "4 K quench", budget: Duration::from_secs(30), run: low_temperature_quench },
        Criterion { id: 9, name: "rate-curve shape", budget: Duration::from_secs(10), run: figure_shape },
        Criterion { id: 10, name: "fit round trip", budget: Duration::from_secs(600), run: fit_round_trip },
        Criterion { id: 11, name: "lattice modes", budget: Duration::from_secs(10), run: lattice_chain },
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    let mut ran = 0;
    for c in criteria.iter().filter(|c| only.is_none_or(|o| o == c.id)) {
        let start = Instant::now();
        let o = (c.run)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = o.pass && in_time;
        ran += 1;
        failed += usize::from(!pass);
        println!(
            "[{}] {:>2}. {} ({:.2} s / {} s): {}{}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            o.detail,
            if in_time { "" } else { " [over time budget]" }
        );
    }
    println!("acceptance: {}/{ran} passed", ran - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
