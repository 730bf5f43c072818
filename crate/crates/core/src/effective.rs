//! Effective permeability from the electromotive-force balance around one
//! resonator, plus the closed-form ring and split-ring laws.
//!
//! `μ̂ = ∫_D μ dA`, `ρ̂ = ∮_{∂D} σ⁻¹ ds`, `m = ρ̂ / (ρ̂ − iωμ̂)` and
//! `μ* = ∫_Q M μ dA` with `M = 1` in `D*` and `M = m` in `D`.

use std::f64::consts::PI;

use crate::cell::CorrectorSolution;
use crate::error::{invalid, Result};
use crate::geometry::{CellGeometry, Point};
use crate::model::{MaterialSet, SymTensor2, WaveParams, C64, I};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HatQuantities {
    pub mu_hat: C64,
    pub rho_hat: C64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveMu {
    pub mu_hat: C64,
    pub rho_hat: C64,
    pub m_ratio: C64,
    pub mu_star: C64,
}

/// Effective coefficients of one homogenized layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveMedia {
    pub mu: EffectiveMu,
    pub eps_star: SymTensor2,
}

impl EffectiveMedia {
    pub fn m_ratio(&self) -> C64 {
        self.mu.m_ratio
    }

    pub fn mu_star(&self) -> C64 {
        self.mu.mu_star
    }
}

pub fn hat_quantities(geom: &CellGeometry, mats: &MaterialSet, wave: &WaveParams) -> Result<HatQuantities> {
    let resistance = mats.surface.resistance(wave)?;
    Ok(HatQuantities {
        mu_hat: mats.mu_interior * geom.area(),
        rho_hat: resistance * geom.perimeter(),
    })
}

/// `ρ̂` for a resistance that varies along `∂D`, by the composite midpoint
/// rule on the boundary polyline.
pub fn rho_hat_quadrature(geom: &CellGeometry, resistance: impl Fn(Point) -> C64) -> C64 {
    geom.boundary_integral(resistance)
}

pub fn m_ratio(mu_hat: C64, rho_hat: C64, omega: f64) -> Result<C64> {
    let den = rho_hat - I * omega * mu_hat;
    if den.norm() == 0.0 || !den.is_finite() {
        return Err(invalid(format!(
            "m ratio has a pole: rho_hat = {rho_hat}, i*omega*mu_hat = {}",
            I * omega * mu_hat
        )));
    }
    Ok(rho_hat / den)
}

impl EffectiveMu {
    pub fn compute(geom: &CellGeometry, mats: &MaterialSet, wave: &WaveParams) -> Result<Self> {
        let hats = hat_quantities(geom, mats, wave)?;
        // an empty inclusion carries no current; M ≡ 1
        let m = if geom.is_empty() {
            C64::new(1.0, 0.0)
        } else {
            m_ratio(hats.mu_hat, hats.rho_hat, wave.omega)?
        };
        let area = geom.area();
        Ok(EffectiveMu {
            mu_hat: hats.mu_hat,
            rho_hat: hats.rho_hat,
            m_ratio: m,
            mu_star: mats.mu_matrix * (1.0 - area) + m * mats.mu_interior * area,
        })
    }
}

/// `μ* = ∫_Q M(y) μ(y) dA` for piecewise-constant `μ`.
pub fn mu_star_quadrature(geom: &CellGeometry, mats: &MaterialSet, wave: &WaveParams) -> Result<C64> {
    Ok(EffectiveMu::compute(geom, mats, wave)?.mu_star)
}

/// Solid ring of radius `R` and resistance `ρ` in a uniform `μ₀` medium.
pub fn mu_star_ring(radius: f64, rho: f64, omega: f64, mu0: f64) -> C64 {
    let factor = (C64::new(1.0, 0.0) + I * (2.0 * rho / (omega * radius * mu0))).inv();
    mu0 * (1.0 - PI * radius * radius * factor)
}

/// Split ring with reactive part `τ`.
pub fn mu_star_srr(radius: f64, rho: f64, tau: f64, omega: f64, mu0: f64) -> Result<C64> {
    let den = C64::new(1.0, 0.0) + (2.0 / (omega * radius * mu0)) * C64::new(-tau, rho);
    if den.norm() == 0.0 {
        return Err(invalid("split-ring formula evaluated exactly at its pole (rho = 0)"));
    }
    Ok(mu0 * (1.0 - PI * radius * radius * den.inv()))
}

/// Corrector data for the full cell: `P̃ = χ_e P_e − χ_i m` and
/// `Q̃ = χ_i ∇⊥m`. With `m` constant per layer `Q̃` vanishes.
pub struct CorrectorFields<'a> {
    geom: &'a CellGeometry,
    m: C64,
    exterior: &'a CorrectorSolution,
}

pub fn corrector_fields<'a>(geom: &'a CellGeometry, m: C64, pe: &'a CorrectorSolution) -> CorrectorFields<'a> {
    CorrectorFields { geom, m, exterior: pe }
}

impl CorrectorFields<'_> {
    pub fn p_tilde(&self, y: Point) -> [[C64; 2]; 2] {
        if self.geom.chi_interior(y) > 0.5 {
            let d = -self.m;
            let z = C64::new(0.0, 0.0);
            [[d, z], [z, d]]
        } else {
            self.exterior.pe_at(y).unwrap_or([[C64::new(0.0, 0.0); 2]; 2])
        }
    }

    pub fn q_tilde(&self, _y: Point) -> [C64; 2] {
        [C64::new(0.0, 0.0); 2]
    }
}
