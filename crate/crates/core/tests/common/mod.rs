//! Reference implementations shared by integration tests. Nothing here calls
//! into the library's own overlap or enumeration code.

#![allow(dead_code)]

/// Generalized Laguerre polynomial `L_k^{(α)}(x)` by the three-term recurrence.
pub fn laguerre(k: u32, alpha: f64, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 1.0 + alpha - x);
    if k == 0 {
        return prev;
    }
    for j in 1..k {
        let j = j as f64;
        let next = ((2.0 * j + 1.0 + alpha - x) * cur - (j + alpha) * prev) / (j + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `|⟨m|n⟩|²` between displaced oscillators with Huang–Rhys factor `s`:
/// `e^{-S} S^{n-m} m!/n! [L_m^{(n-m)}(S)]²` for `m ≤ n`.
pub fn fc_laguerre(s: f64, a: u32, b: u32) -> f64 {
    let (m, n) = if a <= b { (a, b) } else { (b, a) };
    if s == 0.0 {
        return if m == n { 1.0 } else { 0.0 };
    }
    let mut ratio = 1.0;
    for k in (m + 1)..=n {
        ratio *= s / k as f64;
    }
    let l = laguerre(m, (n - m) as f64, s);
    (-s).exp() * ratio * l * l
}

/// Unpruned effective-mode rate: every initial and final configuration up to
/// `cap` quanta per mode, with the same window-truncated Lorentzian.
pub fn brute_force_rate(modes: &[(f64, f64)], fwhm: f64, window_halfwidths: f64, cap: u32, detuning: f64, kt: f64, scale: f64) -> f64 {
    let window = window_halfwidths * 0.5 * fwhm;
    let configs = all_configurations(modes.len(), cap);
    let mut total = 0.0;
    for g in &configs {
        let e_g: f64 = g.iter().zip(modes).map(|(&n, &(e, _))| n as f64 * e).sum();
        let weight = if e_g == 0.0 {
            1.0
        } else if kt == 0.0 {
            0.0
        } else {
            (-e_g / kt).exp()
        };
        if weight == 0.0 {
            continue;
        }
        for f in &configs {
            let e_e: f64 = f.iter().zip(modes).map(|(&n, &(e, _))| n as f64 * e).sum();
            let mismatch = detuning + e_e - e_g;
            if mismatch.abs() > window {
                continue;
            }
            let x = mismatch / (0.5 * fwhm);
            let fc: f64 = g.iter().zip(f).zip(modes).map(|((&a, &b), &(_, s))| fc_laguerre(s, a, b)).product();
            total += weight * fc / (1.0 + x * x);
        }
    }
    scale * total
}

fn all_configurations(n_modes: usize, cap: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..n_modes {
        out = out
            .into_iter()
            .flat_map(|c| {
                (0..=cap).map(move |q| {
                    let mut c = c.clone();
                    c.push(q);
                    c
                })
            })
            .collect();
    }
    out
}

/// `∫_{x0}^{x1} y(ε) e^{-ε/kT} dε` for `y` linear between `(x0, y0)` and `(x1, y1)`.
pub fn linear_exp_integral(x0: f64, y0: f64, x1: f64, y1: f64, kt: f64) -> f64 {
    let r = (x1 - x0) / kt;
    let e0 = (-x0 / kt).exp();
    let er = (-r).exp();
    kt * e0 * (y0 * (1.0 - er) + (y1 - y0) * (1.0 - (1.0 + r) * er) / r)
}
