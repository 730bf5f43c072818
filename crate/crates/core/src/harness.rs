//! Run configuration, orchestration of single runs and η sweeps, and
//! report files.
//!
//! Output conventions: CSV with a fixed header, complex values as two
//! columns (`re_*`, `im_*`), numbers in scientific notation with 17
//! significant digits; gnuplot data files (`.dat`) carry a `#` header.
//! Wall-clock times go to `timings.csv` only, so all other files are
//! reproducible bit for bit in deterministic mode.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{self, constitutive_checks, is_deep_interior, ConstitutiveReport};
use crate::cell::{self, observed_order, solve_exterior_cell, CorrectorSolution};
use crate::effective::{mu_star_srr, EffectiveMu};
use crate::error::{Error, Result};
use crate::geometry::CellGeometry;
use crate::layered::{flux_balance, solve_layered, Layer, LayerStack, LayeredField, ModeAmplitudes};
use crate::mesh::CellMesh;
use crate::micro::{self, default_m_modes, discrete_energy_identity, EnergyBalance, MicroSolution};
use crate::model::{validate_lattice, MaterialSet, SlabLattice, SurfaceModel, SymTensor2, ValidatedLattice, WaveParams, C64};
use crate::rayleigh::{rayleigh_oracle_eps_star, RayleighResult};
use crate::strip::StripMesh;

// ---------------------------------------------------------------- config

/// A complex number given either as a real scalar or as `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexValue {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexValue {
    pub fn value(self) -> C64 {
        match self {
            ComplexValue::Real(x) => C64::new(x, 0.0),
            ComplexValue::Pair([re, im]) => C64::new(re, im),
        }
    }
}

impl Default for ComplexValue {
    fn default() -> Self {
        ComplexValue::Real(1.0)
    }
}

/// An isotropic value or the three entries of a symmetric tensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorValue {
    Isotropic(ComplexValue),
    Full {
        xx: ComplexValue,
        xy: ComplexValue,
        yy: ComplexValue,
    },
}

impl TensorValue {
    pub fn value(self) -> SymTensor2 {
        match self {
            TensorValue::Isotropic(v) => SymTensor2::isotropic(v.value()),
            TensorValue::Full { xx, xy, yy } => SymTensor2 {
                xx: xx.value(),
                xy: xy.value(),
                yy: yy.value(),
            },
        }
    }
}

impl Default for TensorValue {
    fn default() -> Self {
        TensorValue::Isotropic(ComplexValue::default())
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveConfig {
    pub omega: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub incident_order: i32,
    #[serde(default = "one")]
    pub eps0: f64,
    #[serde(default = "one")]
    pub mu0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Polygon,
}

fn default_segments() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub shape: ShapeKind,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_segments")]
    pub n_segments: usize,
    #[serde(default)]
    pub vertices: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialsConfig {
    #[serde(default)]
    pub eps_matrix: TensorValue,
    #[serde(default)]
    pub eps_interior: TensorValue,
    #[serde(default)]
    pub mu_matrix: ComplexValue,
    #[serde(default)]
    pub mu_interior: ComplexValue,
    pub surface: SurfaceModel,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// `N₁` at the first entry of `cells_per_period`.
    pub cells_across: usize,
    /// `N₂` values of the η sweep.
    pub cells_per_period: Vec<usize>,
    /// Scale `N₁` with `N₂` so the slab thickness stays fixed.
    #[serde(default = "default_true")]
    pub fixed_thickness: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceEps {
    /// Cell problem on the master mesh of the micro solver.
    Consistent,
    /// Cell problem on a fine mesh of the meshed resonator polygon.
    Fine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub mesh_h: f64,
    pub margin_cells: usize,
    pub m_modes: Option<usize>,
    pub solver_tol: f64,
    pub offsets: [f64; 2],
    pub reference_eps: ReferenceEps,
    pub reference_mesh_h: f64,
    pub cell_refinement: [f64; 3],
    pub rayleigh_order: usize,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            mesh_h: 0.125,
            margin_cells: 2,
            m_modes: None,
            solver_tol: micro::MICRO_SOLVER_TOL,
            offsets: averaging::DEFAULT_OFFSETS,
            reference_eps: ReferenceEps::Consistent,
            reference_mesh_h: 1.0 / 64.0,
            cell_refinement: [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            rayleigh_order: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsConfig {
    pub directory: PathBuf,
    pub fields: bool,
    pub averages: bool,
    pub mesh: bool,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        OutputsConfig {
            directory: PathBuf::from("out"),
            fields: false,
            averages: true,
            mesh: false,
        }
    }
}

/// Optional scan of the split-ring reactance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSweep {
    pub tau_min: f64,
    pub tau_max: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub wave: WaveConfig,
    pub cell: CellConfig,
    pub materials: MaterialsConfig,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub tau_sweep: Option<TauSweep>,
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Errors of the checks in [`RunConfig::validate`] are reported as
/// configuration errors.
fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    /// The acceptance scenario: circle `R = 0.3`, `ρ = 0.1`, `ω = 0.8`,
    /// `N₂ ∈ {8, 16, 32}` with `b − a = π`.
    pub fn scenario() -> Self {
        RunConfig {
            wave: WaveConfig {
                omega: 0.8,
                kappa: 0.0,
                incident_order: 0,
                eps0: 1.0,
                mu0: 1.0,
            },
            cell: CellConfig {
                shape: ShapeKind::Circle,
                radius: Some(0.3),
                n_segments: 64,
                vertices: None,
            },
            materials: MaterialsConfig {
                eps_matrix: TensorValue::default(),
                eps_interior: TensorValue::default(),
                mu_matrix: ComplexValue::default(),
                mu_interior: ComplexValue::default(),
                surface: SurfaceModel::SimpleRing { rho: 0.1 },
            },
            lattice: LatticeConfig {
                cells_across: 4,
                cells_per_period: vec![8, 16, 32],
                fixed_thickness: true,
            },
            numerics: NumericsConfig::default(),
            outputs: OutputsConfig::default(),
            tau_sweep: None,
        }
    }

    /// The scenario with no resonators and matched materials.
    pub fn transparent() -> Self {
        let mut c = Self::scenario();
        c.cell.radius = Some(0.0);
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        self.wave().map_err(as_config)?;
        self.geometry().map_err(as_config)?;
        self.materials().map_err(as_config)?;
        self.lattices().map_err(as_config)?;
        let n = &self.numerics;
        if !(n.mesh_h > 0.0 && n.reference_mesh_h > 0.0 && n.cell_refinement.iter().all(|h| *h > 0.0)) {
            return Err(Error::Config("mesh sizes must be positive".into()));
        }
        if n.margin_cells == 0 {
            return Err(Error::Config("margin_cells must be at least 1".into()));
        }
        if !(n.solver_tol > 0.0 && n.solver_tol < 1.0) {
            return Err(Error::Config("solver_tol must lie in (0, 1)".into()));
        }
        if n.offsets.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
            return Err(Error::Config("line offsets must lie in (0, 1)".into()));
        }
        if n.rayleigh_order < 2 {
            return Err(Error::Config("rayleigh_order must be at least 2".into()));
        }
        if let Some(t) = &self.tau_sweep {
            if t.steps < 2 || !(t.tau_max > t.tau_min) || t.tau_min < 0.0 {
                return Err(Error::Config("tau_sweep needs 0 <= tau_min < tau_max and steps >= 2".into()));
            }
        }
        Ok(())
    }

    pub fn wave(&self) -> Result<WaveParams> {
        let w = &self.wave;
        WaveParams::new(w.omega, w.kappa, w.incident_order, w.eps0, w.mu0)
    }

    pub fn geometry(&self) -> Result<CellGeometry> {
        match self.cell.shape {
            ShapeKind::Circle => {
                if self.cell.vertices.is_some() {
                    return Err(Error::Config("a circle takes `radius`, not `vertices`".into()));
                }
                let r = self.cell.radius.ok_or_else(|| Error::Config("circle needs `radius`".into()))?;
                CellGeometry::circle(r, self.cell.n_segments)
            }
            ShapeKind::Polygon => {
                if self.cell.radius.is_some() {
                    return Err(Error::Config("a polygon takes `vertices`, not `radius`".into()));
                }
                let v = self.cell.vertices.clone().ok_or_else(|| Error::Config("polygon needs `vertices`".into()))?;
                CellGeometry::polygon(v)
            }
        }
    }

    pub fn materials(&self) -> Result<MaterialSet> {
        let m = &self.materials;
        let set = MaterialSet {
            eps_matrix: m.eps_matrix.value(),
            eps_interior: m.eps_interior.value(),
            mu_matrix: m.mu_matrix.value(),
            mu_interior: m.mu_interior.value(),
            surface: m.surface,
        };
        set.validate()?;
        Ok(set)
    }

    /// Lattices of the η sweep, in the order of `cells_per_period`.
    pub fn lattices(&self) -> Result<Vec<ValidatedLattice>> {
        let l = &self.lattice;
        let first = *l.cells_per_period.first().ok_or_else(|| Error::Config("cells_per_period is empty".into()))?;
        l.cells_per_period
            .iter()
            .map(|&n2| {
                let n1 = if l.fixed_thickness {
                    if n2 == 0 || first == 0 || (l.cells_across * n2) % first != 0 {
                        return Err(Error::InvalidLattice(format!(
                            "N1 = {} at N2 = {first} cannot be scaled to N2 = {n2} with integer cells",
                            l.cells_across
                        )));
                    }
                    l.cells_across * n2 / first
                } else {
                    l.cells_across
                };
                validate_lattice(SlabLattice {
                    cells_across: n1,
                    cells_per_period: n2,
                })
            })
            .collect()
    }

    fn lattice_for(&self, n2: Option<usize>) -> Result<ValidatedLattice> {
        let all = self.lattices()?;
        match n2 {
            None => Ok(*all.last().expect("validated non-empty")),
            Some(n) => all
                .into_iter()
                .find(|l| l.cells_per_period == n)
                .ok_or_else(|| Error::Config(format!("N2 = {n} is not in cells_per_period"))),
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidGeometry(_) | Error::InvalidLattice(_) | Error::Io(_) => 2,
        Error::NearSingular { .. } | Error::Solver(_) | Error::Mesh(_) | Error::Anisotropic(_) => 3,
    }
}

// ---------------------------------------------------------------- output helpers

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn cnum(z: C64) -> String {
    format!("{:.16e},{:.16e}", z.re, z.im)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, contents)?;
    Ok(p)
}

// ---------------------------------------------------------------- effective

#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveReport {
    pub mu: EffectiveMu,
    /// Closed-form `μ*` for circular resonators in a uniform `μ`.
    pub mu_closed_form: Option<C64>,
    pub eps_star: SymTensor2,
    pub eps_star_condition: f64,
    pub eps_oracle: Option<RayleighResult>,
    pub tau_sweep: Vec<(f64, C64)>,
}

fn closed_form_mu(geom: &CellGeometry, mats: &MaterialSet, wave: &WaveParams) -> Result<Option<C64>> {
    let r = match geom.radius() {
        Some(r) if r > 0.0 => r,
        _ => return Ok(None),
    };
    if mats.mu_matrix != mats.mu_interior || mats.mu_matrix.im != 0.0 {
        return Ok(None);
    }
    let res = mats.surface.resistance(wave)?;
    mu_star_srr(r, res.re, res.im, wave.omega, mats.mu_matrix.re).map(Some)
}

fn oracle_for(geom: &CellGeometry, eps: SymTensor2, order: usize) -> Result<Option<RayleighResult>> {
    match geom.radius() {
        Some(r) if r <= 0.35 && eps.is_isotropic(0.0) && eps.xx.im == 0.0 => Ok(Some(rayleigh_oracle_eps_star(r, eps.xx.re, order)?)),
        _ => Ok(None),
    }
}

pub fn run_effective(cfg: &RunConfig, out: &Path) -> Result<EffectiveReport> {
    let (geom, mats, wave) = (cfg.geometry()?, cfg.materials()?, cfg.wave()?);
    let mu = EffectiveMu::compute(&geom, &mats, &wave)?;
    let mu_closed_form = closed_form_mu(&geom, &mats, &wave)?;
    let cell = solve_exterior_cell(&geom, mats.eps_matrix, cfg.numerics.reference_mesh_h)?;
    let eps_oracle = oracle_for(&geom, mats.eps_matrix, cfg.numerics.rayleigh_order)?;
    let mut tau_sweep = Vec::new();
    if let (Some(t), Some(r)) = (&cfg.tau_sweep, geom.radius()) {
        let rho = mats.surface.resistance(&wave)?.re;
        for k in 0..t.steps {
            let tau = t.tau_min + (t.tau_max - t.tau_min) * k as f64 / (t.steps - 1) as f64;
            tau_sweep.push((tau, mu_star_srr(r, rho, tau, wave.omega, mats.mu_matrix.re)?));
        }
    }
    let rep = EffectiveReport {
        mu,
        mu_closed_form,
        eps_star: cell.eps_star,
        eps_star_condition: cell.eps_star_condition,
        eps_oracle,
        tau_sweep,
    };
    let mut s = String::from("quantity,re,im\n");
    let mut row = |name: &str, z: C64| {
        let _ = writeln!(s, "{name},{}", cnum(z));
    };
    row("mu_star", rep.mu.mu_star);
    if let Some(z) = rep.mu_closed_form {
        row("mu_star_closed_form", z);
    }
    row("m_ratio", rep.mu.m_ratio);
    row("mu_hat", rep.mu.mu_hat);
    row("rho_hat", rep.mu.rho_hat);
    row("eps_star_xx", rep.eps_star.xx);
    row("eps_star_xy", rep.eps_star.xy);
    row("eps_star_yy", rep.eps_star.yy);
    row("eps_star_condition", C64::new(rep.eps_star_condition, 0.0));
    if let Some(o) = rep.eps_oracle {
        row("eps_star_oracle", C64::new(o.eps_star, 0.0));
    }
    write_file(out, "effective.csv", &s)?;
    if !rep.tau_sweep.is_empty() {
        let mut csv = String::from("tau,re_mu_star,im_mu_star\n");
        let mut dat = String::from("# tau re_mu_star im_mu_star\n");
        for (t, z) in &rep.tau_sweep {
            let _ = writeln!(csv, "{},{}", num(*t), cnum(*z));
            let _ = writeln!(dat, "{} {} {}", num(*t), num(z.re), num(z.im));
        }
        write_file(out, "tau_sweep.csv", &csv)?;
        write_file(out, "tau_sweep.dat", &dat)?;
    }
    Ok(rep)
}

// ---------------------------------------------------------------- cell

#[derive(Clone, Debug, PartialEq)]
pub struct CellReport {
    pub mesh_h: [f64; 3],
    pub eps_star: [SymTensor2; 3],
    pub residuals: [f64; 3],
    pub observed_order: f64,
    pub oracle: Option<RayleighResult>,
}

pub fn run_cell(cfg: &RunConfig, out: &Path) -> Result<CellReport> {
    let (geom, mats) = (cfg.geometry()?, cfg.materials()?);
    let hs = cfg.numerics.cell_refinement;
    let sols: Vec<CorrectorSolution> = hs.par_iter().map(|&h| solve_exterior_cell(&geom, mats.eps_matrix, h)).collect::<Result<_>>()?;
    let eps_star = [sols[0].eps_star, sols[1].eps_star, sols[2].eps_star];
    let rep = CellReport {
        mesh_h: hs,
        eps_star,
        residuals: [sols[0].residual_norm, sols[1].residual_norm, sols[2].residual_norm],
        observed_order: observed_order(eps_star.map(|e| e.xx.re)),
        oracle: oracle_for(&geom, mats.eps_matrix, cfg.numerics.rayleigh_order)?,
    };
    let mut s = String::from("mesh_h,re_eps_xx,im_eps_xx,re_eps_xy,im_eps_xy,re_eps_yy,im_eps_yy,residual\n");
    for k in 0..3 {
        let e = rep.eps_star[k];
        let _ = writeln!(s, "{},{},{},{},{}", num(hs[k]), cnum(e.xx), cnum(e.xy), cnum(e.yy), num(rep.residuals[k]));
    }
    let _ = writeln!(s, "# observed order {}", num(rep.observed_order));
    if let Some(o) = rep.oracle {
        let _ = writeln!(s, "# rayleigh oracle {} (diverged: {})", num(o.eps_star), o.diverged);
    }
    write_file(out, "cell.csv", &s)?;
    if cfg.outputs.mesh {
        write_file(out, "cell_mesh.txt", &sols[2].mesh.write_text())?;
    }
    Ok(rep)
}

// ---------------------------------------------------------------- homogenized

/// Homogenized slab shared by every row of a sweep.
#[derive(Clone, Debug)]
pub struct HomogenizedReference {
    pub eps_star: SymTensor2,
    pub mu: EffectiveMu,
    pub stack: LayerStack,
    pub amplitudes: ModeAmplitudes,
    pub field: LayeredField,
    pub reflected: f64,
    pub transmitted: f64,
}

impl HomogenizedReference {
    pub fn a(&self, wave: &WaveParams) -> C64 {
        self.amplitudes.a_of(wave.incident_order)
    }

    pub fn b(&self, wave: &WaveParams) -> C64 {
        self.amplitudes.b_of(wave.incident_order)
    }
}

/// The geometry actually meshed: the resonator polygon of the master mesh.
pub fn meshed_geometry(geom: &CellGeometry, master: &CellMesh) -> Result<CellGeometry> {
    if geom.is_empty() {
        Ok(geom.clone())
    } else {
        CellGeometry::polygon(master.meshed_boundary())
    }
}

pub fn homogenized_reference(cfg: &RunConfig, master: &CellMesh, lattice: &ValidatedLattice) -> Result<HomogenizedReference> {
    let (geom, mats, wave) = (cfg.geometry()?, cfg.materials()?, cfg.wave()?);
    let meshed = meshed_geometry(&geom, master)?;
    let eps_star = match cfg.numerics.reference_eps {
        ReferenceEps::Consistent => cell::solve_on_mesh(master.clone(), mats.eps_matrix)?.eps_star,
        ReferenceEps::Fine => solve_exterior_cell(&meshed, mats.eps_matrix, cfg.numerics.reference_mesh_h)?.eps_star,
    };
    let mu = EffectiveMu::compute(&meshed, &mats, &wave)?;
    let stack = LayerStack::new(vec![Layer::from_tensor(lattice.a, lattice.b, eps_star, mu.mu_star)?])?;
    let amplitudes = solve_layered(&wave, &stack, 0)?;
    let field = LayeredField::solve(&wave, &stack)?;
    let (reflected, transmitted) = flux_balance(&wave, &amplitudes);
    Ok(HomogenizedReference {
        eps_star,
        mu,
        stack,
        amplitudes,
        field,
        reflected,
        transmitted,
    })
}

pub fn master_mesh(cfg: &RunConfig) -> Result<CellMesh> {
    CellMesh::build(&cfg.geometry()?, cfg.numerics.mesh_h)
}

pub fn run_homogenized(cfg: &RunConfig, out: &Path) -> Result<HomogenizedReference> {
    let master = master_mesh(cfg)?;
    let lat = cfg.lattice_for(None)?;
    let wave = cfg.wave()?;
    let r = homogenized_reference(cfg, &master, &lat)?;
    let mut s = String::from("quantity,re,im\n");
    for (k, z) in [
        ("a", r.a(&wave)),
        ("b", r.b(&wave)),
        ("reflected_flux", C64::new(r.reflected, 0.0)),
        ("transmitted_flux", C64::new(r.transmitted, 0.0)),
        ("eps_star", r.eps_star.xx),
        ("mu_star", r.mu.mu_star),
        ("m_ratio", r.mu.m_ratio),
    ] {
        let _ = writeln!(s, "{k},{}", cnum(z));
    }
    write_file(out, "homogenized.csv", &s)?;
    let margin = cfg.numerics.margin_cells as f64 * lat.eta;
    let (x0, x1) = (lat.a - margin, lat.b + margin);
    let mut dat = String::from("# x1 re_h im_h abs_h\n");
    for k in 0..=400 {
        let x = x0 + (x1 - x0) * k as f64 / 400.0;
        let h = r.field.h_at([x, 0.0]);
        let _ = writeln!(dat, "{} {} {} {}", num(x), num(h.re), num(h.im), num(h.norm()));
    }
    write_file(out, "homogenized_profile.dat", &dat)?;
    Ok(r)
}

// ---------------------------------------------------------------- micro

#[derive(Clone, Debug)]
pub struct MicroRun {
    pub lattice: ValidatedLattice,
    pub mesh: StripMesh,
    pub solution: MicroSolution,
    pub energy: EnergyBalance,
}

pub fn solve_micro(cfg: &RunConfig, master: &CellMesh, lattice: ValidatedLattice) -> Result<MicroRun> {
    let (mats, wave) = (cfg.materials()?, cfg.wave()?);
    let mesh = StripMesh::build(master, lattice, cfg.numerics.margin_cells)?;
    let m_modes = cfg.numerics.m_modes.unwrap_or_else(|| default_m_modes(&wave, &mesh));
    let solution = micro::solve_orders_tol(&mesh, &mats, &wave, lattice.eta, m_modes, &[wave.incident_order], cfg.numerics.solver_tol)?
        .remove(0);
    let energy = discrete_energy_identity(&solution, &mesh)?;
    Ok(MicroRun {
        lattice,
        mesh,
        solution,
        energy,
    })
}

fn amplitudes_csv(a: &ModeAmplitudes) -> String {
    let mut s = String::from("mode,re_a,im_a,re_b,im_b\n");
    for (i, m) in a.modes.iter().enumerate() {
        let _ = writeln!(s, "{m},{},{}", cnum(a.a[i]), cnum(a.b[i]));
    }
    s
}

fn energy_csv(e: &EnergyBalance) -> String {
    let mut s = String::from("quantity,value\n");
    for (k, v) in [
        ("input_flux", e.input_flux),
        ("reflected_flux", e.reflected_flux),
        ("transmitted_flux", e.transmitted_flux),
        ("volume_absorption", e.volume_absorption),
        ("interface_absorption", e.interface_absorption),
        ("imbalance", e.imbalance),
    ] {
        let _ = writeln!(s, "{k},{}", num(v));
    }
    s
}

/// Single strip solve at `N₂ = n2` (default: the finest lattice).
pub fn run_micro(cfg: &RunConfig, n2: Option<usize>, out: &Path) -> Result<MicroRun> {
    let master = master_mesh(cfg)?;
    let run = solve_micro(cfg, &master, cfg.lattice_for(n2)?)?;
    export_micro(cfg, &run, out)?;
    Ok(run)
}

fn export_micro(cfg: &RunConfig, run: &MicroRun, out: &Path) -> Result<()> {
    let (mats, wave) = (cfg.materials()?, cfg.wave()?);
    write_file(out, "micro_amplitudes.csv", &amplitudes_csv(&run.solution.amplitudes))?;
    write_file(out, "micro_energy.csv", &energy_csv(&run.energy))?;
    if cfg.outputs.fields {
        write_file(out, "micro_fields.csv", &micro::write_field_table(&run.solution.h, &run.mesh, &mats, &wave))?;
    }
    if cfg.outputs.averages {
        let avgs = averaging::compute_cell_averages(&run.solution, &run.mesh, cfg.numerics.offsets)?;
        write_file(out, "micro_averages.csv", &averaging::averages_csv(&avgs))?;
    }
    if cfg.outputs.mesh {
        write_file(out, "strip_mesh.txt", &run.mesh.write_text())?;
    }
    Ok(())
}

// ---------------------------------------------------------------- converge

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub cells_across: usize,
    pub cells_per_period: usize,
    pub eta: f64,
    pub a: C64,
    pub b: C64,
    pub delta_a: f64,
    pub delta_b: f64,
    pub delta_r: f64,
    pub delta_t: f64,
    pub l2_error: f64,
    /// Same error with `m ← 1`.
    pub l2_error_control: f64,
    pub checks: ConstitutiveReport,
    pub imbalance: f64,
    pub absorbed: f64,
    pub aliasing_warning: bool,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub reference: HomogenizedReference,
    pub reference_a: C64,
    pub reference_b: C64,
    pub rows: Vec<ConvergenceRow>,
    /// `(N₂, reason)` of runs that were skipped.
    pub skipped: Vec<(usize, String)>,
    /// Names of error columns that do not decrease strictly with η.
    pub non_monotone: Vec<String>,
}

impl ConvergenceReport {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        column_getter(name).map(|f| self.rows.iter().map(f).collect())
    }
}

type Getter = fn(&ConvergenceRow) -> f64;

/// Error columns checked for strict decrease.
pub const MONOTONE_COLUMNS: [&str; 10] = [
    "delta_r",
    "delta_t",
    "delta_a",
    "delta_b",
    "l2_error",
    "ratio_error",
    "d_median",
    "b_median",
    "jump_constancy",
    "et_max",
];

fn column_getter(name: &str) -> Option<Getter> {
    Some(match name {
        "delta_r" => |r| r.delta_r,
        "delta_t" => |r| r.delta_t,
        "delta_a" => |r| r.delta_a,
        "delta_b" => |r| r.delta_b,
        "l2_error" => |r| r.l2_error,
        "l2_error_control" => |r| r.l2_error_control,
        "ratio_error" => |r| r.checks.ratio_median.unwrap_or(f64::NAN),
        "d_median" => |r| r.checks.d_median,
        "d_symmetric_median" => |r| r.checks.d_symmetric_median,
        "b_median" => |r| r.checks.b_median,
        "offset_spread" => |r| r.checks.offset_spread_median,
        "jump_constancy" => |r| r.checks.jump_constancy_median.unwrap_or(f64::NAN),
        "et_max" => |r| r.checks.et_max,
        "imbalance" => |r| r.imbalance,
        _ => return None,
    })
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn diagnose_row(cfg: &RunConfig, run: &MicroRun, reference: &HomogenizedReference, wall_time: f64) -> Result<ConvergenceRow> {
    let wave = cfg.wave()?;
    let sol = &run.solution;
    let m = reference.mu.m_ratio;
    let (ra, rb) = (reference.a(&wave), reference.b(&wave));
    let (a, b) = (sol.amplitudes.a_of(wave.incident_order), sol.amplitudes.b_of(wave.incident_order));
    let avgs = averaging::compute_cell_averages(sol, &run.mesh, cfg.numerics.offsets)?;
    let deep: Vec<_> = avgs.into_iter().filter(|x| is_deep_interior(x, run.lattice.cells_across)).collect();
    Ok(ConvergenceRow {
        cells_across: run.lattice.cells_across,
        cells_per_period: run.lattice.cells_per_period,
        eta: run.lattice.eta,
        a,
        b,
        delta_a: (a - ra).norm(),
        delta_b: (b - rb).norm(),
        delta_r: (run.energy.reflected_flux - reference.reflected).abs(),
        delta_t: (run.energy.transmitted_flux - reference.transmitted).abs(),
        l2_error: averaging::twoscale_field_error(sol, &run.mesh, &reference.field, m),
        l2_error_control: averaging::twoscale_field_error(sol, &run.mesh, &reference.field, C64::new(1.0, 0.0)),
        checks: constitutive_checks(&deep, reference.eps_star, reference.mu.mu_star, m),
        imbalance: run.energy.relative_imbalance(),
        absorbed: run.energy.absorbed(),
        aliasing_warning: sol.aliasing_warning,
        wall_time,
    })
}

pub fn run_converge(cfg: &RunConfig, out: &Path) -> Result<ConvergenceReport> {
    let lattices = cfg.lattices()?;
    if lattices.len() < 2 {
        return Err(Error::Config("a convergence run needs at least two N2 values".into()));
    }
    let thickness = lattices[0].b - lattices[0].a;
    if lattices.iter().any(|l| ((l.b - l.a) - thickness).abs() > 1e-12 * thickness) {
        return Err(Error::Config("the sweep must keep the slab thickness fixed (set fixed_thickness = true)".into()));
    }
    let wave = cfg.wave()?;
    let master = master_mesh(cfg)?;
    let reference = homogenized_reference(cfg, &master, &lattices[0])?;
    let results: Vec<(usize, Result<ConvergenceRow>)> = lattices
        .par_iter()
        .map(|&lat| {
            let t = Instant::now();
            let row = solve_micro(cfg, &master, lat).and_then(|run| {
                export_micro(cfg, &run, &out.join(format!("n2_{}", lat.cells_per_period)))?;
                diagnose_row(cfg, &run, &reference, t.elapsed().as_secs_f64())
            });
            (lat.cells_per_period, row)
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (n2, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e @ Error::NearSingular { .. }) => {
                log::warn!("N2 = {n2} skipped: {e}");
                skipped.push((n2, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    let mut report = ConvergenceReport {
        reference_a: reference.a(&wave),
        reference_b: reference.b(&wave),
        reference,
        rows,
        skipped,
        non_monotone: Vec::new(),
    };
    for name in MONOTONE_COLUMNS {
        let col = report.column(name).unwrap_or_default();
        if col.iter().all(|v| v.is_finite()) && !strictly_decreasing(&col) {
            log::warn!("column {name} is not strictly decreasing: {col:?}");
            report.non_monotone.push(name.to_string());
        }
    }
    write_convergence(&report, out)?;
    Ok(report)
}

const CONVERGENCE_COLUMNS: [&str; 13] = [
    "delta_a",
    "delta_b",
    "delta_r",
    "delta_t",
    "l2_error",
    "l2_error_control",
    "ratio_error",
    "d_median",
    "d_symmetric_median",
    "b_median",
    "offset_spread",
    "jump_constancy",
    "et_max",
];

fn write_convergence(rep: &ConvergenceReport, out: &Path) -> Result<()> {
    let mut s = String::from("n1,n2,eta,re_a,im_a,re_b,im_b,re_a_ref,im_a_ref,re_b_ref,im_b_ref");
    for c in CONVERGENCE_COLUMNS {
        s.push(',');
        s.push_str(c);
    }
    s.push_str(",imbalance,absorbed\n");
    let mut dat = String::from("# eta");
    for c in CONVERGENCE_COLUMNS {
        dat.push(' ');
        dat.push_str(c);
    }
    dat.push('\n');
    let mut timing = String::from("n2,wall_time_s\n");
    for r in &rep.rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            r.cells_across,
            r.cells_per_period,
            num(r.eta),
            cnum(r.a),
            cnum(r.b),
            cnum(rep.reference_a),
            cnum(rep.reference_b)
        );
        let _ = write!(dat, "{}", num(r.eta));
        for c in CONVERGENCE_COLUMNS {
            let v = column_getter(c).map(|f| f(r)).unwrap_or(f64::NAN);
            let _ = write!(s, ",{}", num(v));
            let _ = write!(dat, " {}", num(v));
        }
        let _ = writeln!(s, ",{},{}", num(r.imbalance), num(r.absorbed));
        dat.push('\n');
        let _ = writeln!(timing, "{},{:.3}", r.cells_per_period, r.wall_time);
    }
    for (n2, why) in &rep.skipped {
        let _ = writeln!(s, "# skipped N2 = {n2}: {why}");
    }
    for c in &rep.non_monotone {
        let _ = writeln!(s, "# not strictly decreasing: {c}");
    }
    write_file(out, "convergence.csv", &s)?;
    write_file(out, "convergence.dat", &dat)?;
    write_file(out, "timings.csv", &timing)?;
    Ok(())
}

// ---------------------------------------------------------------- diagnose

#[derive(Clone, Debug)]
pub struct DiagnoseReport {
    pub rows: Vec<ConvergenceRow>,
    pub warnings: Vec<String>,
}

/// Per-cell constitutive and averaging diagnostics for every η, plus
/// warnings about Rayleigh–Wood proximity and trace resolution.
pub fn run_diagnose(cfg: &RunConfig, out: &Path) -> Result<DiagnoseReport> {
    let wave = cfg.wave()?;
    let mut warnings = Vec::new();
    for m in wave.incident_order - 3..=wave.incident_order + 3 {
        let nu2 = wave.nu_squared(m);
        if nu2.abs() < 1e-2 {
            warnings.push(format!("order {m} is close to grazing (nu^2 = {nu2:.3e}); the DtN map is poorly conditioned"));
        }
    }
    let lattices = cfg.lattices()?;
    let master = master_mesh(cfg)?;
    let reference = homogenized_reference(cfg, &master, &lattices[0])?;
    let mut rows = Vec::new();
    let mut cells = String::from("n2,cell,d_error,d_error_symmetric,b_error,ratio_error,offset_spread,jump_constancy\n");
    for lat in lattices {
        let t = Instant::now();
        let run = match solve_micro(cfg, &master, lat) {
            Ok(r) => r,
            Err(e @ Error::NearSingular { .. }) => {
                warnings.push(format!("N2 = {} skipped: {e}", lat.cells_per_period));
                continue;
            }
            Err(e) => return Err(e),
        };
        if run.solution.aliasing_warning {
            warnings.push(format!(
                "N2 = {}: {} trace nodes for {} modes (fewer than four per mode)",
                lat.cells_per_period,
                run.mesh.gamma_minus.len(),
                2 * run.solution.m_modes + 1
            ));
        }
        let row = diagnose_row(cfg, &run, &reference, t.elapsed().as_secs_f64())?;
        for c in &row.checks.cells {
            let _ = writeln!(
                cells,
                "{},{},{},{},{},{},{},{}",
                lat.cells_per_period,
                c.cell,
                num(c.d_error),
                num(c.d_error_symmetric),
                num(c.b_error),
                num(c.ratio_error.unwrap_or(f64::NAN)),
                num(c.offset_spread),
                num(c.jump_constancy.unwrap_or(f64::NAN))
            );
        }
        rows.push(row);
    }
    write_file(out, "diagnose_cells.csv", &cells)?;
    let mut s = String::new();
    for w in &warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    write_file(out, "diagnose_warnings.txt", &s)?;
    Ok(DiagnoseReport { rows, warnings })
}

// ---------------------------------------------------------------- selftest

#[derive(Clone, Debug, PartialEq)]
pub struct SelfTestResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> SelfTestResult {
    SelfTestResult {
        name: name.into(),
        passed,
        detail,
    }
}

/// Two-interface closed form for a single isotropic layer at normal
/// incidence, in the amplitude convention of the layered solver.
pub fn airy_single_layer(wave: &WaveParams, a: f64, b: f64, eps: C64, mu: C64) -> (C64, C64) {
    let i = C64::new(0.0, 1.0);
    let nu = wave.nu_incident();
    let q = crate::layered::branch_sqrt(wave.omega * wave.omega * mu * eps - wave.k_parallel(wave.incident_order).powi(2));
    let (y0, y1) = (nu / wave.eps0, q / eps);
    let r = (y0 - y1) / (y0 + y1);
    let d = b - a;
    let ph = (i * q * d).exp();
    let den = 1.0 - r * r * ph * ph;
    let refl = r * (1.0 - ph * ph) / den;
    let trans = (1.0 - r * r) * ph / den;
    (refl * (2.0 * i * nu * a).exp(), trans * (-i * nu * d).exp())
}

/// Fast internal consistency checks.
pub fn run_selftest() -> Vec<SelfTestResult> {
    let mut out = Vec::new();
    // low-discrepancy parameter set
    let frac = |k: usize, g: f64| (k as f64 * g).fract();
    let (mut dmax, mut im_min) = (0.0f64, f64::INFINITY);
    let mut first_err = None;
    for k in 1..=100 {
        let r = 0.05 + 0.4 * frac(k, 0.618_033_988_749_895);
        let rho = 0.01 + 9.99 * frac(k, 0.754_877_666_246_693);
        let omega = 0.1 + 4.9 * frac(k, 0.569_840_290_998_053);
        let mu0 = 0.5 + 1.5 * frac(k, 0.436_993_705_777_376);
        let res = (|| -> Result<(C64, C64)> {
            let geom = CellGeometry::circle(r, 64)?;
            let mats = MaterialSet::uniform(1.0, mu0, SurfaceModel::SimpleRing { rho });
            let wave = WaveParams::new(omega, 0.0, 0, 1.0, mu0)?;
            Ok((crate::effective::mu_star_quadrature(&geom, &mats, &wave)?, crate::effective::mu_star_ring(r, rho, omega, mu0)))
        })();
        match res {
            Ok((q, c)) => {
                dmax = dmax.max((q - c).norm());
                im_min = im_min.min(q.im);
            }
            Err(e) => first_err = Some(e.to_string()),
        }
    }
    out.push(check("mu_star dual path", first_err.is_none() && dmax <= 1e-12, format!("max |diff| = {dmax:.3e}")));
    out.push(check("mu_star positivity", first_err.is_none() && im_min > 0.0, format!("min Im mu* = {im_min:.3e}")));

    let eps = (|| -> Result<(f64, f64)> {
        let geom = CellGeometry::circle(0.2, 128)?;
        let fem = solve_exterior_cell(&geom, SymTensor2::real_isotropic(1.0), 1.0 / 32.0)?.eps_star.xx.re;
        Ok((fem, rayleigh_oracle_eps_star(0.2, 1.0, 10)?.eps_star))
    })();
    out.push(match eps {
        Ok((f, o)) => check("eps_star vs multipole oracle", ((f - o) / o).abs() < 1e-2, format!("fem {f:.6}, oracle {o:.6}")),
        Err(e) => check("eps_star vs multipole oracle", false, e.to_string()),
    });

    let small = |radius: f64| -> Result<(MicroRun, WaveParams)> {
        let mut cfg = RunConfig::scenario();
        cfg.cell.radius = Some(radius);
        cfg.lattice = LatticeConfig {
            cells_across: 2,
            cells_per_period: vec![8],
            fixed_thickness: true,
        };
        let master = master_mesh(&cfg)?;
        Ok((solve_micro(&cfg, &master, cfg.lattices()?[0])?, cfg.wave()?))
    };
    out.push(match small(0.3) {
        Ok((run, _)) => check(
            "discrete energy identity",
            run.energy.relative_imbalance() <= 1e-8 && run.energy.interface_absorption > 0.0,
            format!("imbalance {:.3e}", run.energy.relative_imbalance()),
        ),
        Err(e) => check("discrete energy identity", false, e.to_string()),
    });
    out.push(match small(0.0) {
        Ok((run, w)) => {
            let (a, b) = (run.solution.amplitudes.a_of(w.incident_order), run.solution.amplitudes.b_of(w.incident_order));
            let err = a.norm().max((b - 1.0).norm());
            check("transparent slab", err < 1e-2, format!("max(|a|, |b-1|) = {err:.3e}"))
        }
        Err(e) => check("transparent slab", false, e.to_string()),
    });

    let layered = (|| -> Result<f64> {
        let wave = WaveParams::normal(1.3)?;
        let (eps, mu) = (C64::new(2.5, 0.3), C64::new(0.8, 0.1));
        let stack = LayerStack::single(0.0, 1.7, eps, mu)?;
        let amps = solve_layered(&wave, &stack, 2)?;
        let (ra, rb) = airy_single_layer(&wave, 0.0, 1.7, eps, mu);
        Ok((amps.a_of(0) - ra).norm().max((amps.b_of(0) - rb).norm()))
    })();
    out.push(match layered {
        Ok(d) => check("layered solver vs closed form", d <= 1e-12, format!("max diff {d:.3e}")),
        Err(e) => check("layered solver vs closed form", false, e.to_string()),
    });
    out
}
