//! Shared domain types and conventions.
//!
//! Time dependence is `e^{-iωt}` throughout. All lengths are nondimensional
//! with the macroscopic unit set to one; the strip has period `2π` in `x₂`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Default proximity threshold for Rayleigh–Wood anomalies (`|ν_m|` below it).
pub const TOL_WOOD: f64 = 1e-8;

/// Incident Bloch wave and exterior medium.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveParams {
    pub omega: f64,
    pub kappa: f64,
    pub incident_order: i32,
    pub eps0: f64,
    pub mu0: f64,
}

impl WaveParams {
    pub fn new(omega: f64, kappa: f64, incident_order: i32, eps0: f64, mu0: f64) -> Result<Self> {
        let wave = WaveParams {
            omega,
            kappa,
            incident_order,
            eps0,
            mu0,
        };
        wave.validate()?;
        Ok(wave)
    }

    /// Normal incidence in vacuum-like exterior (`ε₀ = μ₀ = 1`, `κ = 0`, `m̄ = 0`).
    pub fn normal(omega: f64) -> Result<Self> {
        Self::new(omega, 0.0, 0, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(invalid(format!("omega must be positive, got {}", self.omega)));
        }
        if !(-0.5..0.5).contains(&self.kappa) {
            return Err(invalid(format!("kappa must lie in [-1/2, 1/2), got {}", self.kappa)));
        }
        if !(self.eps0 > 0.0 && self.mu0 > 0.0) {
            return Err(invalid("exterior eps0 and mu0 must be positive"));
        }
        if self.nu_squared(self.incident_order) <= 0.0 {
            return Err(invalid(format!(
                "incident order {} does not propagate (nu^2 = {:.6e})",
                self.incident_order,
                self.nu_squared(self.incident_order)
            )));
        }
        Ok(())
    }

    /// Tangential wavenumber `m + κ` of order `m`.
    pub fn k_parallel(&self, m: i32) -> f64 {
        m as f64 + self.kappa
    }

    pub fn nu_squared(&self, m: i32) -> f64 {
        let k = self.k_parallel(m);
        self.eps0 * self.mu0 * self.omega * self.omega - k * k
    }

    /// `ν_m` on the outgoing branch: real positive, or `i·t` with `t > 0`.
    pub fn nu(&self, m: i32) -> C64 {
        let s = self.nu_squared(m);
        if s >= 0.0 {
            C64::new(s.sqrt(), 0.0)
        } else {
            C64::new(0.0, (-s).sqrt())
        }
    }

    pub fn nu_incident(&self) -> f64 {
        self.nu(self.incident_order).re
    }

    pub fn is_propagating(&self, m: i32) -> bool {
        self.nu_squared(m) > 0.0
    }

    /// Orders with `ν_m² > 0`.
    pub fn propagating_orders(&self) -> Vec<i32> {
        let kmax = (self.eps0 * self.mu0).sqrt() * self.omega;
        let lo = (-kmax - self.kappa).floor() as i32 - 1;
        let hi = (kmax - self.kappa).ceil() as i32 + 1;
        (lo..=hi).filter(|&m| self.is_propagating(m)).collect()
    }
}

/// Result of [`nu_exponent`]: the exponent and a Wood-anomaly flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NuExponent {
    pub value: C64,
    pub near_wood_anomaly: bool,
}

pub fn nu_exponent(wave: &WaveParams, m: i32) -> NuExponent {
    nu_exponent_with_tol(wave, m, TOL_WOOD)
}

pub fn nu_exponent_with_tol(wave: &WaveParams, m: i32, tol_wood: f64) -> NuExponent {
    let value = wave.nu(m);
    let near_wood_anomaly = value.norm() < tol_wood;
    if near_wood_anomaly {
        log::warn!("order {m} is within {tol_wood:e} of a Rayleigh-Wood anomaly (|nu| = {:e})", value.norm());
    }
    NuExponent {
        value,
        near_wood_anomaly,
    }
}

/// Complex symmetric 2×2 tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymTensor2 {
    pub xx: C64,
    pub xy: C64,
    pub yy: C64,
}

impl SymTensor2 {
    pub fn isotropic(v: C64) -> Self {
        SymTensor2 {
            xx: v,
            xy: C64::new(0.0, 0.0),
            yy: v,
        }
    }

    pub fn real_isotropic(v: f64) -> Self {
        Self::isotropic(C64::new(v, 0.0))
    }

    pub fn det(&self) -> C64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d.norm() == 0.0 || !d.is_finite() {
            return None;
        }
        Some(SymTensor2 {
            xx: self.yy / d,
            xy: -self.xy / d,
            yy: self.xx / d,
        })
    }

    pub fn apply(&self, v: [C64; 2]) -> [C64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    pub fn apply_real(&self, v: [f64; 2]) -> [C64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    pub fn as_matrix(&self) -> [[C64; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }

    pub fn scale(&self) -> f64 {
        self.xx.norm().max(self.yy.norm()).max(self.xy.norm())
    }

    /// True when the tensor is a multiple of the identity to `rel_tol`.
    pub fn is_isotropic(&self, rel_tol: f64) -> bool {
        let s = self.scale().max(f64::MIN_POSITIVE);
        (self.xx - self.yy).norm() <= rel_tol * s && self.xy.norm() <= rel_tol * s
    }

    /// Eigenvalues of the real (resp. imaginary) part, ascending.
    pub fn real_part_eigenvalues(&self) -> [f64; 2] {
        sym_eigs(self.xx.re, self.xy.re, self.yy.re)
    }

    pub fn imag_part_eigenvalues(&self) -> [f64; 2] {
        sym_eigs(self.xx.im, self.xy.im, self.yy.im)
    }

    /// Check `Re(ε ξ·ξ) > 0` and `Im(ε ξ·ξ) ≥ 0` for all real unit `ξ`.
    pub fn check_admissible(&self, name: &str) -> Result<()> {
        let re = self.real_part_eigenvalues();
        let im = self.imag_part_eigenvalues();
        if !(re[0] > 0.0) {
            return Err(invalid(format!("{name}: real part must be positive definite (min eigenvalue {:e})", re[0])));
        }
        if im[0] < -1e-14 * self.scale() {
            return Err(invalid(format!("{name}: imaginary part must be positive semidefinite (min eigenvalue {:e})", im[0])));
        }
        Ok(())
    }
}

fn sym_eigs(a: f64, b: f64, d: f64) -> [f64; 2] {
    let m = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    [m - r, m + r]
}

/// Constitutive law on the resonator surface. The solver uses `σ_s = σ/η`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceModel {
    /// Solid ring or cylinder: `σ = 1/ρ`.
    SimpleRing { rho: f64 },
    /// Split ring with a fixed reactive part: `σ = (ρ + iτ)⁻¹`.
    SrrPhenomenological { rho: f64, tau: f64 },
    /// Split ring with `τ = 3Δ / (2π² ω ε_gap R²)`.
    SrrGeometric {
        rho: f64,
        delta: f64,
        eps_gap: f64,
        radius: f64,
    },
}

impl SurfaceModel {
    pub fn validate(&self) -> Result<()> {
        let rho = match *self {
            SurfaceModel::SimpleRing { rho } => rho,
            SurfaceModel::SrrPhenomenological { rho, tau } => {
                if !tau.is_finite() || tau < 0.0 {
                    return Err(invalid(format!("tau must be >= 0 so that Im(sigma) <= 0, got {tau}")));
                }
                rho
            }
            SurfaceModel::SrrGeometric {
                rho,
                delta,
                eps_gap,
                radius,
            } => {
                if !(delta > 0.0 && eps_gap > 0.0 && radius > 0.0) {
                    return Err(invalid("srr_geometric requires delta, eps_gap and radius > 0"));
                }
                rho
            }
        };
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(invalid(format!("rho must be positive (Re sigma > 0), got {rho}")));
        }
        Ok(())
    }

    /// Surface resistance `σ⁻¹ = ρ + iτ` at the given frequency.
    pub fn resistance(&self, wave: &WaveParams) -> Result<C64> {
        self.validate()?;
        Ok(match *self {
            SurfaceModel::SimpleRing { rho } => C64::new(rho, 0.0),
            SurfaceModel::SrrPhenomenological { rho, tau } => C64::new(rho, tau),
            SurfaceModel::SrrGeometric {
                rho,
                delta,
                eps_gap,
                radius,
            } => {
                let tau = 3.0 * delta / (2.0 * PI * PI * wave.omega * eps_gap * radius * radius);
                C64::new(rho, tau)
            }
        })
    }
}

/// η-independent surface conductivity `σ`.
pub fn surface_sigma(model: &SurfaceModel, wave: &WaveParams) -> Result<C64> {
    Ok(model.resistance(wave)?.inv())
}

/// Piecewise-constant material data of the unit cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialSet {
    pub eps_matrix: SymTensor2,
    pub eps_interior: SymTensor2,
    pub mu_matrix: C64,
    pub mu_interior: C64,
    pub surface: SurfaceModel,
}

impl MaterialSet {
    /// Real isotropic ε, μ in both regions.
    pub fn uniform(eps: f64, mu: f64, surface: SurfaceModel) -> Self {
        MaterialSet {
            eps_matrix: SymTensor2::real_isotropic(eps),
            eps_interior: SymTensor2::real_isotropic(eps),
            mu_matrix: C64::new(mu, 0.0),
            mu_interior: C64::new(mu, 0.0),
            surface,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.eps_matrix.check_admissible("eps_matrix")?;
        self.eps_interior.check_admissible("eps_interior")?;
        for (name, mu) in [("mu_matrix", self.mu_matrix), ("mu_interior", self.mu_interior)] {
            if !(mu.re > 0.0) || mu.im < 0.0 {
                return Err(invalid(format!("{name}: need Re mu > 0 and Im mu >= 0, got {mu}")));
            }
        }
        self.surface.validate()
    }
}

/// Micro-cell counts through the slab and per `2π` period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlabLattice {
    pub cells_across: usize,
    pub cells_per_period: usize,
}

/// A lattice with derived scale and slab bounds; both admissibility
/// conditions `η·N₁ = b − a` and `η·N₂ = 2π` hold by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidatedLattice {
    pub cells_across: usize,
    pub cells_per_period: usize,
    pub eta: f64,
    pub a: f64,
    pub b: f64,
}

impl ValidatedLattice {
    pub fn thickness(&self) -> f64 {
        self.b - self.a
    }

    /// Left edge of micro-cell `i` (0-based, counted from `a`).
    pub fn cell_x1(&self, i: usize) -> f64 {
        self.a + self.eta * i as f64
    }
}

/// Validate a lattice with the slab starting at `x₁ = 0`.
pub fn validate_lattice(lat: SlabLattice) -> Result<ValidatedLattice> {
    validate_lattice_at(lat, 0.0)
}

pub fn validate_lattice_at(lat: SlabLattice, a: f64) -> Result<ValidatedLattice> {
    if lat.cells_across == 0 || lat.cells_per_period == 0 {
        return Err(Error::InvalidLattice(format!(
            "cell counts must be positive, got N1 = {}, N2 = {}",
            lat.cells_across, lat.cells_per_period
        )));
    }
    let eta = 2.0 * PI / lat.cells_per_period as f64;
    Ok(ValidatedLattice {
        cells_across: lat.cells_across,
        cells_per_period: lat.cells_per_period,
        eta,
        a,
        b: a + eta * lat.cells_across as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave_225(kappa: f64) -> WaveParams {
        WaveParams::new(1.5, kappa, 0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn nu_examples() {
        let w = wave_225(0.0);
        assert_eq!(nu_exponent(&w, 0).value, C64::new(1.5, 0.0));
        let nu2 = nu_exponent(&w, 2).value;
        assert_eq!(nu2.re, 0.0);
        assert!((nu2.im - 1.75f64.sqrt()).abs() < 1e-15);
        let nu1 = nu_exponent(&w, 1).value;
        assert!((nu1.re - 1.118_034_0).abs() < 1e-7);
        assert_eq!(nu1.im, 0.0);
    }

    #[test]
    fn evanescent_branch_decays() {
        let w = wave_225(0.1);
        for m in [-5, -3, 2, 4, 9] {
            let nu = w.nu(m);
            // e^{iν|x|} must decay
            assert!((I * nu).re < 0.0, "m = {m}: {nu}");
        }
    }

    #[test]
    fn wood_anomaly_is_flagged() {
        let w = WaveParams::new(1.0, 0.0, 0, 1.0, 1.0).unwrap();
        assert!(nu_exponent(&w, 1).near_wood_anomaly);
        assert!(!nu_exponent(&w, 0).near_wood_anomaly);
    }

    #[test]
    fn rejects_bad_wave() {
        assert!(WaveParams::new(1.0, 0.5, 0, 1.0, 1.0).is_err());
        assert!(WaveParams::new(-1.0, 0.0, 0, 1.0, 1.0).is_err());
        assert!(WaveParams::new(0.5, 0.0, 1, 1.0, 1.0).is_err());
        assert!(WaveParams::new(1.0, 0.0, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn propagating_orders_listed() {
        let w = wave_225(0.0);
        assert_eq!(w.propagating_orders(), vec![-1, 0, 1]);
        let w = WaveParams::normal(0.8).unwrap();
        assert_eq!(w.propagating_orders(), vec![0]);
    }

    #[test]
    fn sigma_examples() {
        let w = wave_225(0.0);
        let s = surface_sigma(&SurfaceModel::SimpleRing { rho: 0.1 }, &w).unwrap();
        assert!((s - C64::new(10.0, 0.0)).norm() < 1e-12);
        let s = surface_sigma(&SurfaceModel::SrrPhenomenological { rho: 0.1, tau: 0.0 }, &w).unwrap();
        assert!((s - C64::new(10.0, 0.0)).norm() < 1e-12);
        let s = surface_sigma(&SurfaceModel::SrrPhenomenological { rho: 0.1, tau: 0.2 }, &w).unwrap();
        assert!((s - C64::new(2.0, -4.0)).norm() < 1e-12);
    }

    #[test]
    fn sigma_geometric_matches_formula() {
        let w = wave_225(0.0);
        let model = SurfaceModel::SrrGeometric {
            rho: 0.2,
            delta: 0.01,
            eps_gap: 2.0,
            radius: 0.3,
        };
        let tau = 3.0 * 0.01 / (2.0 * PI * PI * 1.5 * 2.0 * 0.09);
        let s = surface_sigma(&model, &w).unwrap();
        assert!((s - C64::new(0.2, tau).inv()).norm() < 1e-14);
    }

    #[test]
    fn sigma_rejects_nonpositive_rho() {
        let w = wave_225(0.0);
        assert!(surface_sigma(&SurfaceModel::SimpleRing { rho: 0.0 }, &w).is_err());
        assert!(surface_sigma(&SurfaceModel::SimpleRing { rho: -1.0 }, &w).is_err());
        assert!(surface_sigma(&SurfaceModel::SrrPhenomenological { rho: 0.1, tau: -0.1 }, &w).is_err());
    }

    #[test]
    fn lattice_examples() {
        let l = validate_lattice(SlabLattice { cells_across: 4, cells_per_period: 8 }).unwrap();
        assert!((l.eta - PI / 4.0).abs() < 1e-15);
        assert!((l.thickness() - PI).abs() < 1e-14);
        let l = validate_lattice(SlabLattice { cells_across: 1, cells_per_period: 1 }).unwrap();
        assert!((l.eta - 2.0 * PI).abs() < 1e-15);
        assert!((l.thickness() - 2.0 * PI).abs() < 1e-15);
        let l = validate_lattice(SlabLattice { cells_across: 3, cells_per_period: 12 }).unwrap();
        assert!((l.eta - PI / 6.0).abs() < 1e-15);
        assert!((l.thickness() - PI / 2.0).abs() < 1e-14);
        assert!(validate_lattice(SlabLattice { cells_across: 0, cells_per_period: 4 }).is_err());
        assert!(validate_lattice(SlabLattice { cells_across: 2, cells_per_period: 0 }).is_err());
    }

    #[test]
    fn tensor_inverse_and_isotropy() {
        let t = SymTensor2 {
            xx: C64::new(2.0, 0.1),
            xy: C64::new(0.3, 0.0),
            yy: C64::new(1.0, 0.0),
        };
        let inv = t.inverse().unwrap();
        let v = t.apply(inv.apply([C64::new(1.0, 0.0), C64::new(0.0, 0.0)]));
        assert!((v[0] - C64::new(1.0, 0.0)).norm() < 1e-14 && v[1].norm() < 1e-14);
        assert!(!t.is_isotropic(1e-6));
        assert!(SymTensor2::real_isotropic(3.0).is_isotropic(0.0));
        assert!(t.check_admissible("t").is_ok());
        let bad = SymTensor2::isotropic(C64::new(1.0, -0.1));
        assert!(bad.check_admissible("bad").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn exactly_one_part_nonzero(omega in 0.1f64..5.0, kappa in -0.5f64..0.5, m in -20i32..20) {
                let w = WaveParams { omega, kappa, incident_order: 0, eps0: 1.0, mu0: 1.0 };
                let nu = w.nu(m);
                prop_assert!(nu.re >= 0.0 && nu.im >= 0.0);
                prop_assert!(nu.re == 0.0 || nu.im == 0.0);
            }

            #[test]
            fn symmetric_in_m_at_zero_kappa(omega in 0.1f64..5.0, m in 0i32..30) {
                let w = WaveParams { omega, kappa: 0.0, incident_order: 0, eps0: 1.0, mu0: 1.0 };
                prop_assert_eq!(w.nu(m), w.nu(-m));
            }

            #[test]
            fn sigma_sign_bounds(rho in 1e-3f64..10.0, tau in 0.0f64..10.0) {
                let w = WaveParams::normal(1.0).unwrap();
                let s = surface_sigma(&SurfaceModel::SrrPhenomenological { rho, tau }, &w).unwrap();
                prop_assert!(s.re > 0.0);
                prop_assert!(s.im <= 0.0);
            }
        }
    }
}
