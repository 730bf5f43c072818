//! Scattering by the micro-structured slab.
//!
//! Discretizes, with P1 elements on a [`StripMesh`],
//!
//! ```text
//! ∫ ε⁻¹∇⊥h·conj(∇⊥v) − ω²μ h conj(v) dA
//!   − iω ∫_{∂Ωᵢ} η σ⁻¹ (h_e − h_i)(conj(v_e) − conj(v_i)) ds
//!   + ε₀⁻¹ ∫_{Γ±} (T h) conj(v) ds
//!   = −2iν ε₀⁻¹ ∫_{Γ−} e^{i((m̄+κ)x₂ + ν x₁)} conj(v) ds.
//! ```
//!
//! The DtN map and the forcing act on exact Bloch projections of the P1
//! trace, so the discrete energy identity holds to solver precision.
//! Nodes on `x₂ = 2π` are eliminated as `e^{2πiκ}` times their partners.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{bary_point, p1_gradients, p1_mass, rot, QUAD4};
use crate::fourier::TraceProjector;
use crate::geometry::{self, Point};
use crate::layered::{mode_window, ModeAmplitudes};
use crate::model::{MaterialSet, SymTensor2, WaveParams, C64, I};
use crate::sparse::{self, CsrMatrix, LuSolver, SolveStats, TripletBuilder};
use crate::strip::{StripMesh, StripRegion};

/// Relative residual demanded of the strip solve.
pub const MICRO_SOLVER_TOL: f64 = 1e-10;
/// Evanescent decay demanded over the air margin when choosing the DtN truncation.
pub const DTN_DECAY: f64 = 30.0;

/// Smallest `M` with `|ν_m|·margin ≥ 30` for `m = m̄ ± M`, capped at half
/// the number of trace segments.
pub fn default_m_modes(wave: &WaveParams, mesh: &StripMesh) -> usize {
    let margin = mesh.margin_cells as f64 * mesh.lattice.eta;
    let cap = (mesh.gamma_minus.len() - 1) / 2;
    let c = wave.incident_order;
    (1..=cap)
        .find(|&m| {
            let m = m as i32;
            wave.nu(c - m).norm() * margin >= DTN_DECAY && wave.nu(c + m).norm() * margin >= DTN_DECAY
        })
        .unwrap_or(cap)
}

/// Reduced numbering: `h[node] = phase[node] · u[dof[node]]`.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub dof: Vec<usize>,
    pub phase: Vec<C64>,
    pub n: usize,
}

impl DofMap {
    pub fn new(mesh: &StripMesh, kappa: f64) -> Self {
        let mut dof = vec![usize::MAX; mesh.n_nodes()];
        let mut n = 0;
        for (i, s) in mesh.slave_of.iter().enumerate() {
            if s.is_none() {
                dof[i] = n;
                n += 1;
            }
        }
        let shift = (I * 2.0 * PI * kappa).exp();
        let mut phase = vec![C64::new(1.0, 0.0); mesh.n_nodes()];
        for (i, s) in mesh.slave_of.iter().enumerate() {
            if let Some(m) = s {
                dof[i] = dof[*m];
                phase[i] = shift;
            }
        }
        DofMap { dof, phase, n }
    }

    pub fn expand(&self, u: &[C64]) -> Vec<C64> {
        self.dof.iter().zip(&self.phase).map(|(d, p)| p * u[*d]).collect()
    }
}

/// Material coefficients of one element.
#[derive(Clone, Copy, Debug)]
struct ElementMaterial {
    eps_inv: [[C64; 2]; 2],
    mu: C64,
}

fn element_material(region: StripRegion, mats: &MaterialSet, wave: &WaveParams) -> Result<ElementMaterial> {
    let (eps, mu) = match region {
        StripRegion::Air => (SymTensor2::real_isotropic(wave.eps0), C64::new(wave.mu0, 0.0)),
        StripRegion::Matrix => (mats.eps_matrix, mats.mu_matrix),
        StripRegion::Interior => (mats.eps_interior, mats.mu_interior),
    };
    let inv = eps.inverse().ok_or_else(|| Error::InvalidParameter(format!("singular permittivity in {}", region.name())))?;
    Ok(ElementMaterial {
        eps_inv: inv.as_matrix(),
        mu,
    })
}

/// Local `3×3` volume matrix of element `e`.
fn element_matrix(mesh: &StripMesh, e: usize, mat: &ElementMaterial, omega: f64) -> [[C64; 3]; 3] {
    let tri = mesh.triangles[e];
    let (g, area) = p1_gradients(tri.map(|i| mesh.nodes[i]));
    let r = g.map(rot);
    let mass = p1_mass(area);
    let ei = mat.eps_inv;
    let mut k = [[C64::new(0.0, 0.0); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let eb = [ei[0][0] * r[b][0] + ei[0][1] * r[b][1], ei[1][0] * r[b][0] + ei[1][1] * r[b][1]];
            k[a][b] = (eb[0] * r[a][0] + eb[1] * r[a][1]) * area - omega * omega * mat.mu * mass[a][b];
        }
    }
    k
}

fn segment_length(mesh: &StripMesh, s: &crate::strip::InterfaceSegment) -> f64 {
    geometry::dist(mesh.nodes[s.ext[0]], mesh.nodes[s.ext[1]])
}

/// Everything needed to solve and post-process one strip problem.
pub struct MicroSystem {
    pub matrix: CsrMatrix,
    pub dofs: DofMap,
    pub projector: TraceProjector,
    pub modes: Vec<i32>,
    pub resistance: C64,
    pub wave: WaveParams,
}

/// Assemble the strip operator (without right-hand side).
pub fn assemble(mesh: &StripMesh, mats: &MaterialSet, wave: &WaveParams, m_modes: usize) -> Result<MicroSystem> {
    mats.validate()?;
    wave.validate()?;
    let resistance = mats.surface.resistance(wave)?;
    let dofs = DofMap::new(mesh, wave.kappa);
    let materials = [StripRegion::Air, StripRegion::Matrix, StripRegion::Interior]
        .map(|r| element_material(r, mats, wave))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mat_of = |r: StripRegion| match r {
        StripRegion::Air => &materials[0],
        StripRegion::Matrix => &materials[1],
        StripRegion::Interior => &materials[2],
    };
    let n = dofs.n;
    const CHUNK: usize = 4096;
    let chunks: Vec<TripletBuilder> = (0..mesh.triangles.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|es| {
            let mut t = TripletBuilder::with_capacity(n, 9 * es.len());
            for &e in es {
                let k = element_matrix(mesh, e, mat_of(mesh.regions[e]), wave.omega);
                let tri = mesh.triangles[e];
                for a in 0..3 {
                    for b in 0..3 {
                        let (na, nb) = (tri[a], tri[b]);
                        t.push(dofs.dof[na], dofs.dof[nb], dofs.phase[na].conj() * dofs.phase[nb] * k[a][b]);
                    }
                }
            }
            t
        })
        .collect();
    let mut t = TripletBuilder::with_capacity(n, 9 * mesh.triangles.len() + 16 * mesh.interface.len());
    for c in chunks {
        t.extend(c);
    }

    // resonator jump: −iω η σ⁻¹ ∫ (h_e − h_i)(conj v_e − conj v_i)
    let coef = -I * wave.omega * mesh.lattice.eta * resistance;
    for s in &mesh.interface {
        let l = segment_length(mesh, s);
        let m = [[l / 3.0, l / 6.0], [l / 6.0, l / 3.0]];
        for a in 0..2 {
            for b in 0..2 {
                let v = coef * m[a][b];
                let (ea, ia, eb, ib) = (dofs.dof[s.ext[a]], dofs.dof[s.int[a]], dofs.dof[s.ext[b]], dofs.dof[s.int[b]]);
                t.push(ea, eb, v);
                t.push(ea, ib, -v);
                t.push(ia, eb, -v);
                t.push(ia, ib, v);
            }
        }
    }

    // DtN on Γ±: ε₀⁻¹ 2π Σ_m (−iν_m) c_{m,b} conj(c_{m,a})
    let modes = mode_window(wave, m_modes);
    let projector = TraceProjector::new(&mesh.gamma_y(), wave.kappa, &modes);
    let nus: Vec<C64> = modes.iter().map(|&m| wave.nu(m)).collect();
    let k_gamma = dtn_matrix(&projector, &nus, wave.eps0);
    for gamma in [&mesh.gamma_minus, &mesh.gamma_plus] {
        for (a, &na) in gamma.iter().enumerate() {
            for (b, &nb) in gamma.iter().enumerate() {
                t.push(dofs.dof[na], dofs.dof[nb], dofs.phase[na].conj() * dofs.phase[nb] * k_gamma[a][b]);
            }
        }
    }
    Ok(MicroSystem {
        matrix: t.build(),
        dofs,
        projector,
        modes,
        resistance,
        wave: *wave,
    })
}

fn dtn_matrix(p: &TraceProjector, nus: &[C64], eps0: f64) -> Vec<Vec<C64>> {
    let k = p.y.len();
    (0..k)
        .into_par_iter()
        .map(|a| {
            (0..k)
                .map(|b| {
                    let mut s = C64::new(0.0, 0.0);
                    for (mi, nu) in nus.iter().enumerate() {
                        s += -I * nu * p.coef[mi][b] * p.coef[mi][a].conj();
                    }
                    s * (2.0 * PI / eps0)
                })
                .collect()
        })
        .collect()
}

impl MicroSystem {
    /// Right-hand side for incident order `mbar` (must propagate), plus an
    /// optional volume source `∫ f conj(v)`.
    pub fn rhs(&self, mesh: &StripMesh, mbar: i32, source: Option<&(dyn Fn(Point) -> C64 + Sync)>) -> Result<Vec<C64>> {
        let w = WaveParams {
            incident_order: mbar,
            ..self.wave
        };
        w.validate()?;
        let mi = self
            .projector
            .mode_index(mbar)
            .ok_or_else(|| Error::InvalidParameter(format!("incident order {mbar} outside the mode window")))?;
        let nu = w.nu_incident();
        let x_l = mesh.x_minus;
        let mut f = vec![C64::new(0.0, 0.0); self.dofs.n];
        let scale = -2.0 * I * nu / w.eps0 * (I * nu * x_l).exp() * (2.0 * PI);
        for (a, &na) in mesh.gamma_minus.iter().enumerate() {
            f[self.dofs.dof[na]] += self.dofs.phase[na].conj() * scale * self.projector.coef[mi][a].conj();
        }
        if let Some(src) = source {
            for (e, tri) in mesh.triangles.iter().enumerate() {
                let p = tri.map(|i| mesh.nodes[i]);
                let area = mesh.element_area(e);
                for (l, wq) in QUAD4 {
                    let val = src(bary_point(p, l)) * (wq * area);
                    for a in 0..3 {
                        f[self.dofs.dof[tri[a]]] += self.dofs.phase[tri[a]].conj() * val * l[a];
                    }
                }
            }
        }
        Ok(f)
    }
}

/// Solution of one strip problem.
#[derive(Clone, Debug)]
pub struct MicroSolution {
    /// Nodal field; interface nodes carry separate exterior and interior values.
    pub h: Vec<C64>,
    pub amplitudes: ModeAmplitudes,
    pub wave: WaveParams,
    pub mats: MaterialSet,
    pub resistance: C64,
    pub eta: f64,
    pub m_modes: usize,
    pub stats: SolveStats,
    pub aliasing_warning: bool,
}

fn check_eta(mesh: &StripMesh, eta: f64) -> Result<()> {
    if (mesh.lattice.eta - eta).abs() > 1e-12 * eta {
        return Err(Error::Mesh(format!("mesh was built for eta = {}, solver called with {eta}", mesh.lattice.eta)));
    }
    Ok(())
}

impl MicroSolution {
    /// Same solution metadata with a different nodal field (e.g. one read
    /// back from a field table); amplitudes are re-extracted.
    pub fn with_field(&self, mesh: &StripMesh, h: Vec<C64>) -> Result<Self> {
        if h.len() != mesh.n_nodes() {
            return Err(Error::Config(format!("field has {} values, mesh has {} nodes", h.len(), mesh.n_nodes())));
        }
        let mut out = self.clone();
        out.h = h;
        out.amplitudes = extract_amplitudes(&out, mesh, self.m_modes);
        Ok(out)
    }
}

/// Assemble, factorize and solve for the incident order of `wave`.
pub fn assemble_and_solve(mesh: &StripMesh, mats: &MaterialSet, wave: &WaveParams, eta: f64, m_modes: usize) -> Result<MicroSolution> {
    let mut v = solve_orders(mesh, mats, wave, eta, m_modes, &[wave.incident_order])?;
    Ok(v.remove(0))
}

/// Solve several incident orders at the same `(ω, κ, η)` with one factorization.
pub fn solve_orders(mesh: &StripMesh, mats: &MaterialSet, wave: &WaveParams, eta: f64, m_modes: usize, orders: &[i32]) -> Result<Vec<MicroSolution>> {
    solve_orders_tol(mesh, mats, wave, eta, m_modes, orders, MICRO_SOLVER_TOL)
}

/// [`solve_orders`] with an explicit relative residual tolerance.
pub fn solve_orders_tol(
    mesh: &StripMesh,
    mats: &MaterialSet,
    wave: &WaveParams,
    eta: f64,
    m_modes: usize,
    orders: &[i32],
    tol: f64,
) -> Result<Vec<MicroSolution>> {
    check_eta(mesh, eta)?;
    let sys = assemble(mesh, mats, wave, m_modes)?;
    let rhs: Vec<Vec<C64>> = orders.iter().map(|&m| sys.rhs(mesh, m, None)).collect::<Result<_>>()?;
    let (us, stats) = sparse::solve_checked(&sys.matrix, &rhs, tol, "micro-structured slab (possible resonance)")?;
    let aliasing = mesh.gamma_minus.len() < 4 * (2 * m_modes + 1);
    if aliasing {
        log::warn!(
            "trace has {} nodes for {} modes; Fourier coefficients of high orders are poorly resolved",
            mesh.gamma_minus.len(),
            2 * m_modes + 1
        );
    }
    Ok(orders
        .iter()
        .zip(us)
        .map(|(&m, u)| {
            let w = WaveParams { incident_order: m, ..*wave };
            let h = sys.dofs.expand(&u);
            let amplitudes = extract_amplitudes_with(&sys.projector, mesh, &w, &h);
            MicroSolution {
                h,
                amplitudes,
                wave: w,
                mats: *mats,
                resistance: sys.resistance,
                eta,
                m_modes,
                stats,
                aliasing_warning: aliasing,
            }
        })
        .collect())
}

/// Solve with an additional volume source, returning the nodal field.
pub fn solve_with_source(
    mesh: &StripMesh,
    mats: &MaterialSet,
    wave: &WaveParams,
    m_modes: usize,
    source: &(dyn Fn(Point) -> C64 + Sync),
) -> Result<Vec<C64>> {
    let sys = assemble(mesh, mats, wave, m_modes)?;
    let f = sys.rhs(mesh, wave.incident_order, Some(source))?;
    let lu = LuSolver::new(&sys.matrix)?;
    Ok(sys.dofs.expand(&lu.solve(&f)))
}

fn extract_amplitudes_with(p: &TraceProjector, mesh: &StripMesh, wave: &WaveParams, h: &[C64]) -> ModeAmplitudes {
    let trace = |g: &[usize]| -> Vec<C64> { g.iter().map(|&k| h[k]).collect() };
    let hm = p.project(&trace(&mesh.gamma_minus));
    let hp = p.project(&trace(&mesh.gamma_plus));
    let nu0 = wave.nu_incident();
    let (xl, xr) = (mesh.x_minus, mesh.x_plus);
    let mut amps = ModeAmplitudes::zeros(p.modes.clone());
    for (i, &m) in p.modes.iter().enumerate() {
        let nu = wave.nu(m);
        let inc = if m == wave.incident_order { (I * nu0 * xl).exp() } else { C64::new(0.0, 0.0) };
        amps.a[i] = (hm[i] - inc) * (I * nu * xl).exp();
        amps.b[i] = hp[i] * (-I * nu * xr).exp();
    }
    amps
}

/// Bloch amplitudes of the scattered field on `Γ−` and of the field on `Γ+`.
pub fn extract_amplitudes(sol: &MicroSolution, mesh: &StripMesh, m_modes: usize) -> ModeAmplitudes {
    let modes = mode_window(&sol.wave, m_modes);
    let p = TraceProjector::new(&mesh.gamma_y(), sol.wave.kappa, &modes);
    extract_amplitudes_with(&p, mesh, &sol.wave, &sol.h)
}

/// Power bookkeeping normalized to the incident flux.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBalance {
    pub input_flux: f64,
    pub reflected_flux: f64,
    pub transmitted_flux: f64,
    pub volume_absorption: f64,
    pub interface_absorption: f64,
    pub imbalance: f64,
}

impl EnergyBalance {
    pub fn absorbed(&self) -> f64 {
        self.volume_absorption + self.interface_absorption
    }

    pub fn relative_imbalance(&self) -> f64 {
        self.imbalance / self.input_flux
    }
}

/// Evaluate `1 = R + T + absorbed` on the discrete solution.
pub fn discrete_energy_identity(sol: &MicroSolution, mesh: &StripMesh) -> Result<EnergyBalance> {
    let wave = &sol.wave;
    let (refl, trans) = crate::layered::flux_balance(wave, &sol.amplitudes);
    let omega = wave.omega;
    let materials = [StripRegion::Air, StripRegion::Matrix, StripRegion::Interior]
        .map(|r| element_material(r, &sol.mats, wave))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let vol: f64 = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|e| {
            let mat = match mesh.regions[e] {
                StripRegion::Air => &materials[0],
                StripRegion::Matrix => &materials[1],
                StripRegion::Interior => &materials[2],
            };
            let tri = mesh.triangles[e];
            let (g, area) = p1_gradients(tri.map(|i| mesh.nodes[i]));
            let hv = tri.map(|i| sol.h[i]);
            let mut grad = [C64::new(0.0, 0.0); 2];
            for a in 0..3 {
                let r = rot(g[a]);
                grad[0] += hv[a] * r[0];
                grad[1] += hv[a] * r[1];
            }
            let im = mat.eps_inv.map(|row| row.map(|v| v.im));
            let mut geg = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    geg += (grad[r].conj() * im[r][c] * grad[c]).re;
                }
            }
            let mass = p1_mass(area);
            let mut hmh = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    hmh += (hv[a].conj() * mass[a][b] * hv[b]).re;
                }
            }
            omega * omega * mat.mu.im * hmh - geg * area
        })
        .sum();
    let iface: f64 = mesh
        .interface
        .iter()
        .map(|s| {
            let l = segment_length(mesh, s);
            let j0 = sol.h[s.ext[0]] - sol.h[s.int[0]];
            let j1 = sol.h[s.ext[1]] - sol.h[s.int[1]];
            l / 3.0 * (j0.norm_sqr() + j1.norm_sqr() + (j0 * j1.conj()).re)
        })
        .sum::<f64>()
        * omega
        * sol.eta
        * sol.resistance.re;
    let norm = wave.eps0 / (2.0 * PI * wave.nu_incident());
    let volume_absorption = vol * norm;
    let interface_absorption = iface * norm;
    Ok(EnergyBalance {
        input_flux: 1.0,
        reflected_flux: refl,
        transmitted_flux: trans,
        volume_absorption,
        interface_absorption,
        imbalance: (1.0 - refl - trans - volume_absorption - interface_absorption).abs(),
    })
}

/// Permittivity tensor of a strip region.
pub fn region_eps(region: StripRegion, mats: &MaterialSet, wave: &WaveParams) -> SymTensor2 {
    match region {
        StripRegion::Air => SymTensor2::real_isotropic(wave.eps0),
        StripRegion::Matrix => mats.eps_matrix,
        StripRegion::Interior => mats.eps_interior,
    }
}

pub fn region_mu(region: StripRegion, mats: &MaterialSet, wave: &WaveParams) -> C64 {
    match region {
        StripRegion::Air => C64::new(wave.mu0, 0.0),
        StripRegion::Matrix => mats.mu_matrix,
        StripRegion::Interior => mats.mu_interior,
    }
}

/// `E = (iωε)⁻¹∇⊥h` on every element.
pub fn element_e_field(h: &[C64], mesh: &StripMesh, mats: &MaterialSet, wave: &WaveParams) -> Vec<[C64; 2]> {
    let invs = [StripRegion::Air, StripRegion::Matrix, StripRegion::Interior].map(|r| region_eps(r, mats, wave).inverse().map(|t| t.as_matrix()));
    let c = (I * wave.omega).inv();
    (0..mesh.triangles.len())
        .into_par_iter()
        .map(|e| {
            let ei = match mesh.regions[e] {
                StripRegion::Air => invs[0],
                StripRegion::Matrix => invs[1],
                StripRegion::Interior => invs[2],
            }
            .unwrap_or([[C64::new(0.0, 0.0); 2]; 2]);
            let tri = mesh.triangles[e];
            let (g, _) = p1_gradients(tri.map(|i| mesh.nodes[i]));
            let mut r = [C64::new(0.0, 0.0); 2];
            for a in 0..3 {
                let ra = rot(g[a]);
                r[0] += h[tri[a]] * ra[0];
                r[1] += h[tri[a]] * ra[1];
            }
            [c * (ei[0][0] * r[0] + ei[0][1] * r[1]), c * (ei[1][0] * r[0] + ei[1][1] * r[1])]
        })
        .collect()
}

/// Tangential electric field on the resonator boundaries, recovered from
/// the exterior volume residual at each exterior interface node:
/// `M_Γ g = −Σ_ext a(h, φ_k)` per resonator and `E·t = g/(iω)`.
/// Returned per cell, in the master interface order.
pub fn interface_tangential_e(sol: &MicroSolution, mesh: &StripMesh) -> Result<Vec<Vec<C64>>> {
    let wave = &sol.wave;
    let mat = element_material(StripRegion::Matrix, &sol.mats, wave)?;
    let master = &mesh.master;
    let nb = master.interface.len();
    if nb == 0 {
        return Ok(vec![Vec::new(); mesh.n_cells()]);
    }
    // master-local: interface index of each exterior copy
    let mut iface_index = vec![usize::MAX; master.n_nodes()];
    for (j, &(e, _)) in master.interface.iter().enumerate() {
        iface_index[e] = j;
    }
    (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let mut vol = vec![C64::new(0.0, 0.0); nb];
            for (k, e) in mesh.cell_elements[c].clone().enumerate() {
                if mesh.regions[e] != StripRegion::Matrix {
                    continue;
                }
                let local = master.triangles[k];
                if local.iter().all(|&v| iface_index[v] == usize::MAX) {
                    continue;
                }
                let km = element_matrix(mesh, e, &mat, wave.omega);
                let tri = mesh.triangles[e];
                for a in 0..3 {
                    let j = iface_index[local[a]];
                    if j == usize::MAX {
                        continue;
                    }
                    for b in 0..3 {
                        vol[j] += km[a][b] * sol.h[tri[b]];
                    }
                }
            }
            // cyclic interface mass matrix
            let map = &mesh.cell_nodes[c];
            let mut m = vec![vec![C64::new(0.0, 0.0); nb]; nb];
            for j in 0..nb {
                let jn = (j + 1) % nb;
                let l = geometry::dist(mesh.nodes[map[master.interface[j].0]], mesh.nodes[map[master.interface[jn].0]]);
                m[j][j] += l / 3.0;
                m[jn][jn] += l / 3.0;
                m[j][jn] += l / 6.0;
                m[jn][j] += l / 6.0;
            }
            let rhs: Vec<C64> = vol.iter().map(|v| -v).collect();
            let g = sparse::dense_solve(&m, &rhs)?;
            let c_inv = (I * wave.omega).inv();
            Ok(g.into_iter().map(|v| v * c_inv).collect())
        })
        .collect()
}

/// Area-weighted mean of the element field over the elements around each
/// node. Interface copies only see their own side.
pub fn nodal_e_field(e: &[[C64; 2]], mesh: &StripMesh) -> Vec<[C64; 2]> {
    let n = mesh.n_nodes();
    let mut acc = vec![[C64::new(0.0, 0.0); 2]; n];
    let mut w = vec![0.0; n];
    for (k, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.element_area(k);
        for &v in tri {
            acc[v][0] += e[k][0] * a;
            acc[v][1] += e[k][1] * a;
            w[v] += a;
        }
    }
    acc.iter().zip(&w).map(|(a, w)| [a[0] / w, a[1] / w]).collect()
}

/// Jump `j = h_e − h_i` at the interface nodes of every cell.
pub fn interface_jumps(h: &[C64], mesh: &StripMesh) -> Vec<Vec<C64>> {
    (0..mesh.n_cells())
        .map(|c| mesh.master.interface.iter().map(|&(e, i)| h[mesh.cell_nodes[c][e]] - h[mesh.cell_nodes[c][i]]).collect())
        .collect()
}

/// Column header of the field table.
pub const FIELD_HEADER: &str = "x1,x2,region,re_h,im_h,re_e1,im_e1,re_e2,im_e2";

/// One row per node (node order): coordinates, region of the adjacent
/// elements, `h`, and the area-weighted mean of `E` over adjacent elements.
pub fn write_field_table(h: &[C64], mesh: &StripMesh, mats: &MaterialSet, wave: &WaveParams) -> String {
    let e = element_e_field(h, mesh, mats, wave);
    let ev_nodal = nodal_e_field(&e, mesh);
    let n = mesh.n_nodes();
    let mut region = vec![StripRegion::Air; n];
    for (k, tri) in mesh.triangles.iter().enumerate() {
        if mesh.regions[k] != StripRegion::Air {
            for &v in tri {
                region[v] = mesh.regions[k];
            }
        }
    }
    let mut s = String::with_capacity(n * 200);
    s.push_str(FIELD_HEADER);
    s.push('\n');
    for v in 0..n {
        let p = mesh.nodes[v];
        let ev = ev_nodal[v];
        let _ = writeln!(
            s,
            "{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p[0],
            p[1],
            region[v].name(),
            h[v].re,
            h[v].im,
            ev[0].re,
            ev[0].im,
            ev[1].re,
            ev[1].im
        );
    }
    s
}

/// Nodal `h` from a field table written by [`write_field_table`].
pub fn read_field_table(text: &str) -> Result<Vec<C64>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(FIELD_HEADER) {
        return Err(Error::Config("field table: unexpected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Config(format!("field table row {k}: expected 9 columns")));
            }
            let re: f64 = f[3].parse().map_err(|_| Error::Config(format!("field table row {k}: bad re_h")))?;
            let im: f64 = f[4].parse().map_err(|_| Error::Config(format!("field table row {k}: bad im_h")))?;
            Ok(C64::new(re, im))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CellGeometry;
    use crate::mesh::CellMesh;
    use crate::model::{validate_lattice, SlabLattice, SurfaceModel};

    fn strip(radius: f64, n_side: usize, n1: usize, n2: usize) -> StripMesh {
        let g = CellGeometry::circle(radius, 64).unwrap();
        let m = CellMesh::build_with_sides(&g, n_side).unwrap();
        let lat = validate_lattice(SlabLattice { cells_across: n1, cells_per_period: n2 }).unwrap();
        StripMesh::build(&m, lat, 2).unwrap()
    }

    #[test]
    fn transparent_slab_reproduces_plane_wave() {
        let wave = WaveParams::new(0.8, 0.1, 0, 1.0, 1.0).unwrap();
        let mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SimpleRing { rho: 0.1 });
        let mut errs = Vec::new();
        for ns in [4, 8] {
            let mesh = strip(0.0, ns, 2, 4);
            let sol = assemble_and_solve(&mesh, &mats, &wave, mesh.lattice.eta, default_m_modes(&wave, &mesh)).unwrap();
            let bal = discrete_energy_identity(&sol, &mesh).unwrap();
            assert!(bal.absorbed().abs() < 1e-14);
            assert!(bal.relative_imbalance() < 1e-9, "{bal:?}");
            errs.push(sol.amplitudes.a_of(0).norm().max((sol.amplitudes.b_of(0) - 1.0).norm()));
        }
        assert!(errs[0] < 5e-2);
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn lossy_resonators_absorb_and_balance() {
        let mesh = strip(0.3, 4, 2, 4);
        let wave = WaveParams::normal(0.8).unwrap();
        let mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SimpleRing { rho: 0.1 });
        let m = default_m_modes(&wave, &mesh);
        let sol = assemble_and_solve(&mesh, &mats, &wave, mesh.lattice.eta, m).unwrap();
        let bal = discrete_energy_identity(&sol, &mesh).unwrap();
        assert!(bal.interface_absorption > 0.0);
        assert!(bal.relative_imbalance() < 1e-8, "{bal:?}");
    }

    #[test]
    fn pseudo_periodicity_is_exact() {
        let mesh = strip(0.2, 4, 1, 2);
        let wave = WaveParams::new(0.7, 0.3, 0, 1.0, 1.0).unwrap();
        let mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SimpleRing { rho: 0.1 });
        let sol = assemble_and_solve(&mesh, &mats, &wave, mesh.lattice.eta, 4).unwrap();
        let ph = (I * 2.0 * PI * 0.3).exp();
        for (i, s) in mesh.slave_of.iter().enumerate() {
            if let Some(m) = s {
                assert_eq!(sol.h[i], ph * sol.h[*m]);
            }
        }
    }

    #[test]
    fn flux_recovery_matches_jump_condition() {
        let mesh = strip(0.3, 4, 1, 2);
        let wave = WaveParams::normal(0.8).unwrap();
        let mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SrrPhenomenological { rho: 0.1, tau: 0.05 });
        let sol = assemble_and_solve(&mesh, &mats, &wave, mesh.lattice.eta, 6).unwrap();
        let et = interface_tangential_e(&sol, &mesh).unwrap();
        let j = interface_jumps(&sol.h, &mesh);
        for c in 0..mesh.n_cells() {
            for k in 0..et[c].len() {
                let expect = -mesh.lattice.eta * sol.resistance * j[c][k];
                assert!((et[c][k] - expect).norm() < 1e-7 * expect.norm().max(1e-3));
            }
        }
    }

    #[test]
    fn eta_mismatch_is_rejected() {
        let mesh = strip(0.2, 4, 1, 2);
        let wave = WaveParams::normal(0.8).unwrap();
        let mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SimpleRing { rho: 0.1 });
        assert!(assemble_and_solve(&mesh, &mats, &wave, 0.1, 4).is_err());
    }

    #[test]
    fn field_table_round_trip() {
        let mesh = strip(0.2, 4, 1, 2);
        let wave = WaveParams::normal(0.8).unwrap();
        let mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SimpleRing { rho: 0.1 });
        let sol = assemble_and_solve(&mesh, &mats, &wave, mesh.lattice.eta, 4).unwrap();
        let text = write_field_table(&sol.h, &mesh, &mats, &wave);
        assert_eq!(read_field_table(&text).unwrap(), sol.h);
    }

    #[test]
    fn manufactured_plane_wave_converges_at_second_order() {
        let wave = WaveParams::new(0.8, 0.15, 0, 1.0, 1.0).unwrap();
        let mut mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SimpleRing { rho: 0.1 });
        mats.mu_matrix = C64::new(2.0, 0.3);
        let nu = wave.nu_incident();
        let exact = move |p: Point| (I * (wave.kappa * p[1] + nu * p[0])).exp();
        let mut errs = Vec::new();
        for ns in [4, 8] {
            let mesh = strip(0.0, ns, 2, 4);
            let (a, b) = (mesh.lattice.a, mesh.lattice.b);
            let mu = mats.mu_matrix;
            let src = move |p: Point| {
                if p[0] > a && p[0] < b {
                    wave.omega * wave.omega * (1.0 - mu) * exact(p)
                } else {
                    C64::new(0.0, 0.0)
                }
            };
            let h = solve_with_source(&mesh, &mats, &wave, default_m_modes(&wave, &mesh), &src).unwrap();
            let mut e2 = 0.0;
            for (k, tri) in mesh.triangles.iter().enumerate() {
                let p = tri.map(|i| mesh.nodes[i]);
                let area = mesh.element_area(k);
                for (l, w) in QUAD4 {
                    let hh: C64 = (0..3).map(|j| h[tri[j]] * l[j]).sum();
                    e2 += w * area * (hh - exact(bary_point(p, l))).norm_sqr();
                }
            }
            errs.push(e2.sqrt());
        }
        assert!(errs[1] < 0.05, "{errs:?}");
        assert!(errs[0] / errs[1] > 3.3, "{errs:?}");
    }

    #[test]
    fn galerkin_residual_vanishes_against_random_tests() {
        use rand::{Rng, SeedableRng};
        let mesh = strip(0.3, 4, 2, 2);
        let wave = WaveParams::new(0.8, 0.05, 0, 1.0, 1.0).unwrap();
        let mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SrrPhenomenological { rho: 0.1, tau: 0.2 });
        let sys = assemble(&mesh, &mats, &wave, 6).unwrap();
        let f = sys.rhs(&mesh, 0, None).unwrap();
        let u = LuSolver::new(&sys.matrix).unwrap().solve(&f);
        let au = sys.matrix.matvec(&u);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let w: Vec<C64> = (0..sys.dofs.n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let r: C64 = w.iter().zip(au.iter().zip(&f)).map(|(wi, (a, b))| wi.conj() * (a - b)).sum();
            let scale: C64 = w.iter().zip(&f).map(|(wi, b)| wi.conj() * b).sum();
            assert!(r.norm() <= 1e-10 * (sparse::norm2(&w) * sparse::norm2(&f)).max(scale.norm()));
        }
    }
}
