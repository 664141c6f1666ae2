//! Bounded Nelder–Mead on the unit box.
//!
//! Trial points are clamped to `[0, 1]ⁿ`; callers map the box onto their
//! parameter bounds.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Objective evaluations per start, restarts included.
    pub max_evals: usize,
    /// Simplex diameter (unit-box coordinates) at which a run may stop.
    pub xtol: f64,
    /// Relative spread of simplex values at which a run may stop.
    pub ftol: f64,
    pub initial_step: f64,
    /// Fresh simplices built around the incumbent after a run stops.
    pub restarts: usize,
    /// Extra random starts besides the initial guess.
    pub multistart: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_evals: 4000,
            xtol: 1e-8,
            ftol: 1e-12,
            initial_step: 0.1,
            restarts: 2,
            multistart: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub n_evals: usize,
    pub converged: bool,
}

struct Counted<'a, F> {
    f: &'a F,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64> Counted<'_, F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn clamp_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Minimizes `f` from `start`, then restarts around the incumbent until a
/// restart no longer improves it or the budget runs out.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: &F, start: &[f64], cfg: &OptimizerConfig) -> Minimum {
    let mut obj = Counted { f, evals: 0 };
    let mut x = start.to_vec();
    clamp_unit(&mut x);
    if x.is_empty() {
        let v = obj.call(&x);
        return Minimum {
            x,
            f: v,
            n_evals: obj.evals,
            converged: true,
        };
    }
    let (mut best_x, mut best_f, mut converged) = run(&mut obj, &x, cfg);
    for _ in 0..cfg.restarts {
        if obj.evals >= cfg.max_evals {
            break;
        }
        let (rx, rf, rc) = run(&mut obj, &best_x, cfg);
        let improved = rf < best_f - cfg.ftol * (1.0 + best_f.abs());
        if rf < best_f {
            best_x = rx;
            best_f = rf;
        }
        converged = rc;
        if !improved {
            break;
        }
    }
    Minimum {
        x: best_x,
        f: best_f,
        n_evals: obj.evals,
        converged,
    }
}

fn run<F: Fn(&[f64]) -> f64>(obj: &mut Counted<'_, F>, start: &[f64], cfg: &OptimizerConfig) -> (Vec<f64>, f64, bool) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        // step away from the nearer face so the vertex stays distinct
        v[i] = if start[i] + cfg.initial_step <= 1.0 {
            start[i] + cfg.initial_step
        } else {
            start[i] - cfg.initial_step
        };
        clamp_unit(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| obj.call(v)).collect();

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let flat = spread.is_finite() && spread <= cfg.ftol * (1.0 + values[0].abs());
        if diameter <= cfg.xtol || flat && diameter <= cfg.xtol.sqrt() {
            return (simplex[0].clone(), values[0], true);
        }
        if obj.evals >= cfg.max_evals {
            return (simplex[0].clone(), values[0], false);
        }

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect();
            clamp_unit(&mut p);
            p
        };

        let reflected = along(1.0);
        let fr = obj.call(&reflected);
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = obj.call(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(0.5);
            let fc = obj.call(&c);
            (c, fc)
        } else {
            let c = along(-0.5);
            let fc = obj.call(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, v)| b + 0.5 * (v - b)).collect();
            values[i] = obj.call(&shrunk);
            simplex[i] = shrunk;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_minimum() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 10.0 * (x[1] - 0.7).powi(2) + (x[0] - 0.3) * (x[1] - 0.7);
        let m = minimize(&f, &[0.9, 0.1], &OptimizerConfig::default());
        assert!(m.converged);
        assert!((m.x[0] - 0.3).abs() < 1e-5 && (m.x[1] - 0.7).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn respects_box() {
        let f = |x: &[f64]| (x[0] + 1.0).powi(2) + (x[1] - 0.5).powi(2);
        let m = minimize(&f, &[0.5, 0.5], &OptimizerConfig::default());
        assert!(m.x[0] == 0.0 && (m.x[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (4.0 * x[0] - 2.0, 4.0 * x[1] - 2.0);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let m = minimize(&f, &[0.1, 0.1], &OptimizerConfig::default());
        assert!((m.x[0] - 0.75).abs() < 1e-4 && (m.x[1] - 0.75).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let f = |x: &[f64]| x.iter().map(|v| (v - 0.4).powi(2)).sum::<f64>();
        let cfg = OptimizerConfig {
            max_evals: 10,
            ..Default::default()
        };
        let m = minimize(&f, &[0.9, 0.9, 0.9], &cfg);
        assert!(!m.converged);
        assert!(m.n_evals <= 10 + 5);
    }

    #[test]
    fn deterministic() {
        let f = |x: &[f64]| (x[0] - 0.2).abs() + (x[1] - 0.6).powi(2);
        let cfg = OptimizerConfig::default();
        assert_eq!(minimize(&f, &[0.5, 0.5], &cfg), minimize(&f, &[0.5, 0.5], &cfg));
    }
}
