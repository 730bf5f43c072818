//! Rayleigh multipole solution for a square array of perfectly conducting
//! circular cylinders (unit period), used as an independent check of the
//! finite-element effective permittivity.
//!
//! With odd multipole coefficients `x_k` the Rayleigh identity reads
//!
//! ```text
//! x_k = a δ_{k1} + Σ_n C(n+k−1, k) S_{n+k} a^{n+k} x_n,    k, n odd,
//! ```
//!
//! and `ε_eff = ε₁ (1 + 2π a x₁)`. The square-lattice sums vanish unless
//! the index is a multiple of four, apart from the conditionally convergent
//! `S₂ = π`. The rest come from the Eisenstein series at `τ = i`.

use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::sparse::dense_solve;
use crate::model::C64;

/// Successive truncation orders must agree to this level.
pub const DIVERGENCE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayleighResult {
    pub eps_star: f64,
    /// Value with one more multipole, used for the divergence flag.
    pub eps_next: f64,
    pub diverged: bool,
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn zeta(s: f64) -> f64 {
    let n = 64usize;
    let head: f64 = (1..n).map(|k| (k as f64).powf(-s)).sum();
    let nf = n as f64;
    // Euler–Maclaurin tail from n
    head + nf.powf(1.0 - s) / (s - 1.0) + 0.5 * nf.powf(-s) + s * nf.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * nf.powf(-s - 3.0) / 720.0
}

/// `Σ' (m + i n)^{-p}` over the unit square lattice without the origin.
pub fn lattice_sum(p: usize) -> f64 {
    match p {
        2 => PI,
        0 => 0.0,
        p if p % 4 != 0 => 0.0,
        p => {
            let pf = p as f64;
            let q_exp = -2.0 * PI;
            let ln_pref = 2f64.ln() + pf * (2.0 * PI).ln() - ln_factorial(p - 1);
            let e = pf - 1.0;
            let mut series = 0.0;
            for n in 1usize.. {
                // σ_e(n) = n^e Σ_{d|n} d^{-e}
                let nf = n as f64;
                let inner: f64 = (1..=n).filter(|d| n % d == 0).map(|d| (d as f64).powf(-e)).sum();
                let ln_term = ln_pref + e * nf.ln() + inner.ln() + q_exp * nf;
                let term = ln_term.exp();
                series += term;
                if nf > e && term < 1e-18 * series.max(1e-300) {
                    break;
                }
                if n > 10_000 {
                    break;
                }
            }
            2.0 * zeta(pf) + series
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)).exp().round()
}

fn solve_order(radius: f64, order: usize, sums: &[f64]) -> Result<f64> {
    let ks: Vec<usize> = (0..order).map(|j| 2 * j + 1).collect();
    let mut a = vec![vec![C64::new(0.0, 0.0); order]; order];
    let mut b = vec![C64::new(0.0, 0.0); order];
    for (r, &k) in ks.iter().enumerate() {
        a[r][r] += 1.0;
        if k == 1 {
            b[r] = C64::new(radius, 0.0);
        }
        for (c, &n) in ks.iter().enumerate() {
            let s = sums[n + k];
            if s != 0.0 {
                let coef = binomial(n + k - 1, k) * s * radius.powi((n + k) as i32);
                a[r][c] -= coef;
            }
        }
    }
    let x = dense_solve(&a, &b)?;
    Ok(1.0 + 2.0 * PI * radius * x[0].re)
}

/// Effective permittivity of the array with `order` odd multipoles.
pub fn rayleigh_oracle_eps_star(radius: f64, eps1: f64, order: usize) -> Result<RayleighResult> {
    if !(radius >= 0.0 && radius <= 0.35) {
        return Err(invalid(format!("Rayleigh oracle needs 0 <= R <= 0.35, got {radius}")));
    }
    if order < 2 {
        return Err(invalid("Rayleigh oracle needs order >= 2"));
    }
    if radius == 0.0 {
        return Ok(RayleighResult {
            eps_star: eps1,
            eps_next: eps1,
            diverged: false,
        });
    }
    let sums: Vec<f64> = (0..=4 * order + 4).map(lattice_sum).collect();
    let e0 = solve_order(radius, order, &sums)?;
    let e1 = solve_order(radius, order + 1, &sums)?;
    Ok(RayleighResult {
        eps_star: eps1 * e0,
        eps_next: eps1 * e1,
        diverged: (e1 - e0).abs() * eps1 > DIVERGENCE_TOL,
    })
}
