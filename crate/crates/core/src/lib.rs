//! Effective coefficients and slab scattering for periodic arrays of
//! conducting micro-resonators in H-polarization.
//!
//! Time dependence is `e^{−iωt}` throughout. The magnetic field `h` is the
//! out-of-plane component and `E = (iωε)⁻¹∇⊥h` with `∇⊥ = (−∂₂, ∂₁)`.
//! Fields are `2π`-pseudo-periodic in `x₂` with Bloch parameter `κ`.

pub mod averaging;
pub mod cell;
pub mod effective;
pub mod error;
pub mod fem;
pub mod fourier;
pub mod geometry;
pub mod harness;
pub mod layered;
pub mod mesh;
pub mod micro;
pub mod model;
pub mod rayleigh;
pub mod sparse;
pub mod strip;

pub use cell::{interior_corrector, solve_exterior_cell, CorrectorSolution};
pub use effective::{hat_quantities, m_ratio, mu_star_quadrature, mu_star_ring, mu_star_srr, EffectiveMedia, EffectiveMu};
pub use error::{Error, Result};
pub use geometry::CellGeometry;
pub use model::{nu_exponent, surface_sigma, validate_lattice, MaterialSet, SlabLattice, SurfaceModel, SymTensor2, WaveParams, C64};
pub use rayleigh::rayleigh_oracle_eps_star;
