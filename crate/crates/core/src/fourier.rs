//! Exact Fourier projection of piecewise-linear traces on `[0, 2π]`.
//!
//! For a trace `g = Σ_a g_a φ_a` built from hat functions on nodes
//! `0 = y_0 < … < y_K = 2π`, the Bloch coefficients
//! `ĝ_m = (1/2π) ∫ g e^{−i(m+κ)y} dy` are computed segment by segment in
//! closed form, so the discrete DtN map and forcing are exact for the
//! finite-element trace space.

use std::f64::consts::PI;

use crate::model::{C64, I};

/// `(∫₀¹ (1−t) e^{−iθt} dt, ∫₀¹ t e^{−iθt} dt)`.
pub fn hat_integrals(theta: f64) -> (C64, C64) {
    if theta.abs() < 0.5 {
        // power series: ∫₀¹ t^p e^{at} dt = Σ aⁿ / (n! (n + p + 1))
        let a = -I * theta;
        let (mut e, mut f1) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        let mut term = C64::new(1.0, 0.0);
        for n in 0..30 {
            let nf = n as f64;
            e += term / (nf + 1.0);
            f1 += term / (nf + 2.0);
            term = term * a / (nf + 1.0);
        }
        (e - f1, f1)
    } else {
        let a = -I * theta;
        let ea = a.exp();
        let e = (ea - 1.0) / a;
        let f1 = (ea * (a - 1.0) + 1.0) / (a * a);
        (e - f1, f1)
    }
}

/// Projection of hat functions on a trace grid onto Bloch modes.
#[derive(Clone, Debug)]
pub struct TraceProjector {
    pub y: Vec<f64>,
    pub kappa: f64,
    pub modes: Vec<i32>,
    /// `coef[mi][a] = (1/2π) ∫ φ_a e^{−i(m+κ)y} dy`, hat functions on the
    /// unreduced node list (half hats at both ends).
    pub coef: Vec<Vec<C64>>,
}

impl TraceProjector {
    pub fn new(y: &[f64], kappa: f64, modes: &[i32]) -> Self {
        let coef = modes
            .iter()
            .map(|&m| {
                let k = m as f64 + kappa;
                let mut c = vec![C64::new(0.0, 0.0); y.len()];
                for s in 0..y.len() - 1 {
                    let (y0, y1) = (y[s], y[s + 1]);
                    let l = y1 - y0;
                    let (f0, f1) = hat_integrals(k * l);
                    let ph = (-I * k * y0).exp() * (l / (2.0 * PI));
                    c[s] += ph * f0;
                    c[s + 1] += ph * f1;
                }
                c
            })
            .collect();
        TraceProjector {
            y: y.to_vec(),
            kappa,
            modes: modes.to_vec(),
            coef,
        }
    }

    /// Bloch coefficients of the trace with nodal values `g` (unreduced).
    pub fn project(&self, g: &[C64]) -> Vec<C64> {
        self.coef.iter().map(|c| c.iter().zip(g).map(|(ci, gi)| ci * gi).sum()).collect()
    }

    pub fn mode_index(&self, m: i32) -> Option<usize> {
        self.modes.iter().position(|&q| q == m)
    }
}

/// Synthesize `Σ_m ĝ_m e^{i(m+κ)y}`.
pub fn synthesize(modes: &[i32], kappa: f64, ghat: &[C64], y: f64) -> C64 {
    modes.iter().zip(ghat).map(|(&m, g)| g * (I * (m as f64 + kappa) * y).exp()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_and_closed_form_agree() {
        for th in [0.49, 0.5001] {
            let (a0, a1) = hat_integrals(th);
            // direct midpoint quadrature
            let n = 20000;
            let (mut b0, mut b1) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            for j in 0..n {
                let t = (j as f64 + 0.5) / n as f64;
                let e = (-I * th * t).exp() / n as f64;
                b0 += (1.0 - t) * e;
                b1 += t * e;
            }
            assert!((a0 - b0).norm() < 1e-8 && (a1 - b1).norm() < 1e-8);
        }
        let (z0, z1) = hat_integrals(0.0);
        assert!((z0 - 0.5).norm() < 1e-15 && (z1 - 0.5).norm() < 1e-15);
    }

    #[test]
    fn projects_linear_interpolant_exactly() {
        // a single Bloch mode sampled on a fine grid: the P1 projection
        // converges to delta_{m,m0} at second order
        let kappa = 0.2;
        let modes: Vec<i32> = (-3..=3).collect();
        let mut errs = vec![];
        for n in [64, 128] {
            let y: Vec<f64> = (0..=n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
            let p = TraceProjector::new(&y, kappa, &modes);
            let g: Vec<C64> = y.iter().map(|&t| (I * (1.0 + kappa) * t).exp()).collect();
            let gh = p.project(&g);
            let mut e: f64 = 0.0;
            for (i, &m) in modes.iter().enumerate() {
                let target = if m == 1 { 1.0 } else { 0.0 };
                e = e.max((gh[i] - target).norm());
            }
            errs.push(e);
        }
        assert!(errs[0] < 2e-3);
        assert!(errs[0] / errs[1] > 3.5);
    }

    #[test]
    fn constant_trace() {
        let y: Vec<f64> = vec![0.0, 1.0, 2.5, 2.0 * PI];
        let p = TraceProjector::new(&y, 0.0, &[0, 1, -2]);
        let gh = p.project(&[C64::new(1.0, 0.0); 4]);
        assert!((gh[0] - 1.0).norm() < 1e-14);
        assert!(gh[1].norm() < 1e-14 && gh[2].norm() < 1e-14);
    }
}
