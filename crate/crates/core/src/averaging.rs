//! Cell averages of a micro solution and cell-by-cell checks of the
//! effective constitutive laws.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{bary_point, QUAD4};
use crate::layered::LayeredField;
use crate::mesh::{CellMesh, CellRegion};
use crate::micro::{element_e_field, interface_jumps, interface_tangential_e, region_eps, region_mu, MicroSolution};
use crate::model::{SymTensor2, C64};
use crate::strip::{StripMesh, StripRegion};

/// Default line offsets inside the unit cell.
pub const DEFAULT_OFFSETS: [f64; 2] = [0.05, 0.95];
/// Below this magnitude both sides of a constitutive check count as zero.
pub const DEGENERATE: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineDirection {
    /// Along `e₁` at `y₂ = c`.
    Horizontal,
    /// Along `e₂` at `y₁ = c`.
    Vertical,
}

/// Master triangles cut by a cell-spanning line: length fraction inside
/// each (fractions sum to one) and barycentric coordinates of the chord
/// midpoint.
#[derive(Clone, Debug)]
pub struct LineWeights {
    pub direction: LineDirection,
    pub offset: f64,
    pub entries: Vec<(usize, f64, [f64; 3])>,
}

impl LineWeights {
    pub fn new(mesh: &CellMesh, direction: LineDirection, offset: f64) -> Result<Self> {
        if !(offset > 0.0 && offset < 1.0) {
            return Err(Error::InvalidParameter(format!("line offset must lie in (0, 1), got {offset}")));
        }
        let (across, along) = match direction {
            LineDirection::Horizontal => (1, 0),
            LineDirection::Vertical => (0, 1),
        };
        let mut entries = Vec::new();
        for (k, t) in mesh.triangles.iter().enumerate() {
            let p = t.map(|v| mesh.nodes[v]);
            let d = p.map(|q| q[across] - offset);
            let mut hits: Vec<[f64; 3]> = Vec::with_capacity(3);
            let mut on_line = 0;
            let unit = |a: usize| {
                let mut l = [0.0; 3];
                l[a] = 1.0;
                l
            };
            for a in 0..3 {
                let b = (a + 1) % 3;
                if d[a] == 0.0 {
                    hits.push(unit(a));
                    on_line += 1;
                }
                if d[a] * d[b] < 0.0 {
                    let s = d[a] / (d[a] - d[b]);
                    let mut l = [0.0; 3];
                    l[a] = 1.0 - s;
                    l[b] = s;
                    hits.push(l);
                }
            }
            if hits.len() < 2 {
                continue;
            }
            let along_of = |l: &[f64; 3]| (0..3).map(|j| l[j] * p[j][along]).sum::<f64>();
            let lo = hits.iter().min_by(|x, y| along_of(x).total_cmp(&along_of(y))).copied().unwrap_or_default();
            let hi = hits.iter().max_by(|x, y| along_of(x).total_cmp(&along_of(y))).copied().unwrap_or_default();
            let len = along_of(&hi) - along_of(&lo);
            // a line along an edge is shared by both neighbours
            let w = if on_line == 2 { 0.5 } else { 1.0 };
            if len > 0.0 {
                entries.push((k, w * len, [0, 1, 2].map(|j| 0.5 * (lo[j] + hi[j]))));
            }
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Mesh(format!("line at offset {offset} covers length {total}, expected 1")));
        }
        Ok(LineWeights { direction, offset, entries })
    }

    pub fn crosses(&self, mesh: &CellMesh, region: CellRegion) -> bool {
        self.entries.iter().any(|&(k, _, _)| mesh.regions[k] == region)
    }
}

/// Averages of one micro-cell, in cell-scaled units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellAverages {
    pub cell: usize,
    pub i1: usize,
    pub i2: usize,
    /// Centre of the cell in `Ω`.
    pub center: [f64; 2],
    pub h_e_avg: C64,
    /// `None` for cells without an inclusion.
    pub h_i_avg: Option<C64>,
    pub b_avg: C64,
    /// `e_avg[k] = (E₁, E₂)` on the lines at offset `k`.
    pub e_avg: [[C64; 2]; 2],
    pub d_avg: [[C64; 2]; 2],
    pub j_mean: C64,
    pub j_std: f64,
    pub et_max: f64,
}

impl CellAverages {
    /// Mean of the two line offsets; for offsets symmetric about the cell
    /// centre this cancels the first-order drift of the macroscopic field.
    pub fn e_symmetric(&self) -> [C64; 2] {
        [0.5 * (self.e_avg[0][0] + self.e_avg[1][0]), 0.5 * (self.e_avg[0][1] + self.e_avg[1][1])]
    }

    pub fn d_symmetric(&self) -> [C64; 2] {
        [0.5 * (self.d_avg[0][0] + self.d_avg[1][0]), 0.5 * (self.d_avg[0][1] + self.d_avg[1][1])]
    }
}

/// Precomputed line data for both offsets.
pub struct AveragingPlan {
    pub offsets: [f64; 2],
    e_lines: [[LineWeights; 2]; 2],
    d_lines: [[LineWeights; 2]; 2],
}

impl AveragingPlan {
    pub fn new(master: &CellMesh, offsets: [f64; 2]) -> Result<Self> {
        let line = |dir, c| LineWeights::new(master, dir, c);
        let mk = |c: f64| -> Result<([LineWeights; 2], [LineWeights; 2])> {
            // E₁ along e₁ at y₂ = c; D₁ along e₂ at y₁ = c
            let e = [line(LineDirection::Horizontal, c)?, line(LineDirection::Vertical, c)?];
            let d = [line(LineDirection::Vertical, c)?, line(LineDirection::Horizontal, c)?];
            if d.iter().any(|l| l.crosses(master, CellRegion::Interior)) {
                return Err(Error::InvalidParameter(format!(
                    "D-averaging line at offset {c} crosses the inclusion; choose an offset with the line clear of it (e.g. 0.05 or 0.95)"
                )));
            }
            Ok((e, d))
        };
        let (e0, d0) = mk(offsets[0])?;
        let (e1, d1) = mk(offsets[1])?;
        Ok(AveragingPlan {
            offsets,
            e_lines: [e0, e1],
            d_lines: [d0, d1],
        })
    }
}

pub fn compute_cell_averages(sol: &MicroSolution, mesh: &StripMesh, offsets: [f64; 2]) -> Result<Vec<CellAverages>> {
    let plan = AveragingPlan::new(&mesh.master, offsets)?;
    let e_field = element_e_field(&sol.h, mesh, &sol.mats, &sol.wave);
    let et = interface_tangential_e(sol, mesh)?;
    Ok(averages_with(&plan, sol, mesh, &e_field, &et))
}

fn averages_with(plan: &AveragingPlan, sol: &MicroSolution, mesh: &StripMesh, e_field: &[[C64; 2]], et: &[Vec<C64>]) -> Vec<CellAverages> {
    let master = &mesh.master;
    let area_ext = master.region_area(CellRegion::Exterior);
    let area_int = master.region_area(CellRegion::Interior);
    let eps = [StripRegion::Matrix, StripRegion::Interior].map(|r| region_eps(r, &sol.mats, &sol.wave));
    let mu = [StripRegion::Matrix, StripRegion::Interior].map(|r| region_mu(r, &sol.mats, &sol.wave));
    let jumps = interface_jumps(&sol.h, mesh);
    let nb = master.interface.len();
    let seg_len: Vec<f64> = (0..nb)
        .map(|j| crate::geometry::dist(master.nodes[master.interface[j].0], master.nodes[master.interface[(j + 1) % nb].0]))
        .collect();
    let perimeter: f64 = seg_len.iter().sum();

    (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let range = mesh.cell_elements[c].clone();
            let base = range.start;
            let (mut he, mut hi, mut b) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            for (k, e) in range.enumerate() {
                let tri = mesh.triangles[e];
                let mean = (sol.h[tri[0]] + sol.h[tri[1]] + sol.h[tri[2]]) / 3.0;
                let a = master.element_area(k);
                match master.regions[k] {
                    CellRegion::Exterior => {
                        he += mean * a;
                        b += mu[0] * mean * a;
                    }
                    CellRegion::Interior => {
                        hi += mean * a;
                        b += mu[1] * mean * a;
                    }
                }
            }
            let line_avg = |l: &LineWeights, comp: usize, with_eps: bool| -> C64 {
                l.entries
                    .iter()
                    .map(|&(k, w, _)| {
                        let ev = e_field[base + k];
                        let v = if with_eps {
                            let t = match master.regions[k] {
                                CellRegion::Exterior => eps[0],
                                CellRegion::Interior => eps[1],
                            };
                            t.apply(ev)[comp]
                        } else {
                            ev[comp]
                        };
                        v * w
                    })
                    .sum()
            };
            let mut e_avg = [[C64::new(0.0, 0.0); 2]; 2];
            let mut d_avg = [[C64::new(0.0, 0.0); 2]; 2];
            for o in 0..2 {
                for i in 0..2 {
                    e_avg[o][i] = line_avg(&plan.e_lines[o][i], i, false);
                    d_avg[o][i] = line_avg(&plan.d_lines[o][i], i, true);
                }
            }
            let (j_mean, j_std) = if nb == 0 {
                (C64::new(0.0, 0.0), 0.0)
            } else {
                let j = &jumps[c];
                let mean: C64 = (0..nb).map(|s| (j[s] + j[(s + 1) % nb]) * 0.5 * seg_len[s]).sum::<C64>() / perimeter;
                let var: f64 = (0..nb)
                    .map(|s| {
                        let (u0, u1) = (j[s] - mean, j[(s + 1) % nb] - mean);
                        seg_len[s] / 3.0 * (u0.norm_sqr() + u1.norm_sqr() + (u0 * u1.conj()).re)
                    })
                    .sum::<f64>()
                    / perimeter;
                (mean, var.max(0.0).sqrt())
            };
            let (i1, i2) = mesh.cell_position(c);
            let o = mesh.cell_origin(c);
            let eta = mesh.lattice.eta;
            CellAverages {
                cell: c,
                i1,
                i2,
                center: [o[0] + 0.5 * eta, o[1] + 0.5 * eta],
                h_e_avg: he / area_ext,
                h_i_avg: (area_int > 0.0).then(|| hi / area_int),
                b_avg: b / (area_ext + area_int),
                e_avg,
                d_avg,
                j_mean,
                j_std,
                et_max: et[c].iter().map(|v| v.norm()).fold(0.0, f64::max),
            }
        })
        .collect()
}

/// Cells with a full ring of neighbours inside the slab.
pub fn is_deep_interior(avg: &CellAverages, cells_across: usize) -> bool {
    cells_across >= 3 && avg.i1 >= 1 && avg.i1 + 2 <= cells_across
}

fn relative(x: f64, y: f64, diff: f64) -> f64 {
    if x < DEGENERATE && y < DEGENERATE {
        0.0
    } else if x >= DEGENERATE {
        diff / x
    } else {
        diff / y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellCheck {
    pub cell: usize,
    pub d_error: f64,
    /// Same check on the mean of the two offsets.
    pub d_error_symmetric: f64,
    pub b_error: f64,
    /// `|h_i_avg / h_e_avg − m| / |m|`, when the cell has an inclusion.
    pub ratio_error: Option<f64>,
    /// Disagreement of `E_avg` between the two line offsets, relative to `|E_avg|`.
    pub offset_spread: f64,
    pub jump_constancy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstitutiveReport {
    pub cells: Vec<CellCheck>,
    pub d_max: f64,
    pub d_median: f64,
    pub d_symmetric_median: f64,
    pub b_max: f64,
    pub b_median: f64,
    pub ratio_median: Option<f64>,
    pub offset_spread_median: f64,
    pub jump_constancy_median: Option<f64>,
    pub et_max: f64,
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn norm2(v: [C64; 2]) -> f64 {
    (v[0].norm_sqr() + v[1].norm_sqr()).sqrt()
}

/// Per-cell errors of `D_av = ε*E_av`, `b_av = μ*h_e_av` and `h_i/h_e = m`
/// over the given cells (usually the deep-interior ones).
pub fn constitutive_checks(avgs: &[CellAverages], eps_star: SymTensor2, mu_star: C64, m: C64) -> ConstitutiveReport {
    let cells: Vec<CellCheck> = avgs
        .iter()
        .map(|a| {
            let (e, d) = (a.e_avg[0], a.d_avg[0]);
            let pred = eps_star.apply(e);
            let diff = [d[0] - pred[0], d[1] - pred[1]];
            let d_error = relative(norm2(d), norm2(pred), norm2(diff));
            let (es, ds) = (a.e_symmetric(), a.d_symmetric());
            let ps = eps_star.apply(es);
            let d_error_symmetric = relative(norm2(ds), norm2(ps), norm2([ds[0] - ps[0], ds[1] - ps[1]]));
            let bp = mu_star * a.h_e_avg;
            let b_error = relative(a.b_avg.norm(), bp.norm(), (a.b_avg - bp).norm());
            let ratio_error = a.h_i_avg.map(|hi| relative(m.norm(), m.norm(), (hi / a.h_e_avg - m).norm()));
            let spread = [a.e_avg[0][0] - a.e_avg[1][0], a.e_avg[0][1] - a.e_avg[1][1]];
            let offset_spread = relative(norm2(a.e_avg[0]), norm2(a.e_avg[1]), norm2(spread));
            let jump_constancy = (a.j_mean.norm() >= DEGENERATE).then(|| a.j_std / a.j_mean.norm());
            CellCheck {
                cell: a.cell,
                d_error,
                d_error_symmetric,
                b_error,
                ratio_error,
                offset_spread,
                jump_constancy,
            }
        })
        .collect();
    let collect = |f: &dyn Fn(&CellCheck) -> Option<f64>| -> Vec<f64> { cells.iter().filter_map(f).collect() };
    let mut d = collect(&|c| Some(c.d_error));
    let mut ds = collect(&|c| Some(c.d_error_symmetric));
    let mut b = collect(&|c| Some(c.b_error));
    let mut r = collect(&|c| c.ratio_error);
    let mut s = collect(&|c| Some(c.offset_spread));
    let mut j = collect(&|c| c.jump_constancy);
    ConstitutiveReport {
        d_max: d.iter().copied().fold(0.0, f64::max),
        b_max: b.iter().copied().fold(0.0, f64::max),
        d_median: median(&mut d),
        d_symmetric_median: median(&mut ds),
        b_median: median(&mut b),
        ratio_median: (!r.is_empty()).then(|| median(&mut r)),
        offset_spread_median: median(&mut s),
        jump_constancy_median: (!j.is_empty()).then(|| median(&mut j)),
        et_max: avgs.iter().map(|a| a.et_max).fold(0.0, f64::max),
        cells,
    }
}

/// `‖h^η − M h_e⁰‖_{L²}` over the whole computational strip, with
/// `M = m` inside the inclusions and `1` elsewhere.
pub fn twoscale_field_error(sol: &MicroSolution, mesh: &StripMesh, hom: &LayeredField, m: C64) -> f64 {
    (0..mesh.triangles.len())
        .into_par_iter()
        .map(|e| {
            let tri = mesh.triangles[e];
            let p = tri.map(|v| mesh.nodes[v]);
            let scale = if mesh.regions[e] == StripRegion::Interior { m } else { C64::new(1.0, 0.0) };
            let area = mesh.element_area(e);
            QUAD4
                .iter()
                .map(|(l, w)| {
                    let hh: C64 = (0..3).map(|j| sol.h[tri[j]] * l[j]).sum();
                    w * area * (hh - scale * hom.h_at(bary_point(p, *l))).norm_sqr()
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

pub const AVERAGES_HEADER: &str = "cell,i1,i2,x1,x2,re_h_e,im_h_e,re_h_i,im_h_i,re_b,im_b,\
re_e1_c0,im_e1_c0,re_e2_c0,im_e2_c0,re_e1_c1,im_e1_c1,re_e2_c1,im_e2_c1,\
re_d1_c0,im_d1_c0,re_d2_c0,im_d2_c0,re_d1_c1,im_d1_c1,re_d2_c1,im_d2_c1,\
re_j_mean,im_j_mean,j_std,et_max";

/// One row per cell; missing interior averages are written as `nan`.
pub fn averages_csv(avgs: &[CellAverages]) -> String {
    let mut s = String::from(AVERAGES_HEADER);
    s.push('\n');
    let hi_nan = C64::new(f64::NAN, f64::NAN);
    for a in avgs {
        let hi = a.h_i_avg.unwrap_or(hi_nan);
        let _ = write!(s, "{},{},{},{:.16e},{:.16e}", a.cell, a.i1, a.i2, a.center[0], a.center[1]);
        let mut vals = vec![a.h_e_avg, hi, a.b_avg];
        for o in 0..2 {
            vals.extend(a.e_avg[o]);
        }
        for o in 0..2 {
            vals.extend(a.d_avg[o]);
        }
        vals.push(a.j_mean);
        for v in vals {
            let _ = write!(s, ",{:.16e},{:.16e}", v.re, v.im);
        }
        let _ = writeln!(s, ",{:.16e},{:.16e}", a.j_std, a.et_max);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CellGeometry;
    use crate::layered::LayerStack;
    use crate::micro::{assemble_and_solve, default_m_modes};
    use crate::model::{validate_lattice, MaterialSet, SlabLattice, SurfaceModel, WaveParams};

    fn strip(r: f64, n1: usize, n2: usize) -> StripMesh {
        let g = CellGeometry::circle(r, 64).unwrap();
        let m = CellMesh::build_with_sides(&g, 8).unwrap();
        let lat = validate_lattice(SlabLattice { cells_across: n1, cells_per_period: n2 }).unwrap();
        StripMesh::build(&m, lat, 2).unwrap()
    }

    #[test]
    fn line_weights_cover_the_cell() {
        let g = CellGeometry::circle(0.3, 64).unwrap();
        let m = CellMesh::build_with_sides(&g, 8).unwrap();
        for dir in [LineDirection::Horizontal, LineDirection::Vertical] {
            for c in [0.05, 0.5, 0.95, 0.125] {
                let l = LineWeights::new(&m, dir, c).unwrap();
                assert!(l.entries.iter().all(|e| e.1 > 0.0 && (e.2.iter().sum::<f64>() - 1.0).abs() < 1e-14));
            }
        }
        assert!(LineWeights::new(&m, LineDirection::Vertical, 0.5).unwrap().crosses(&m, CellRegion::Interior));
        assert!(AveragingPlan::new(&m, [0.5, 0.05]).is_err());
    }

    #[test]
    fn transparent_medium_averages() {
        let wave = WaveParams::normal(0.8).unwrap();
        let mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SimpleRing { rho: 0.1 });
        let (mut d_err, mut d_sym) = (Vec::new(), Vec::new());
        for n2 in [16, 32] {
            let mesh = strip(0.0, 2, n2);
            let sol = assemble_and_solve(&mesh, &mats, &wave, mesh.lattice.eta, default_m_modes(&wave, &mesh)).unwrap();
            let avgs = compute_cell_averages(&sol, &mesh, DEFAULT_OFFSETS).unwrap();
            for a in &avgs {
                assert!(a.h_i_avg.is_none());
                assert!((a.b_avg - a.h_e_avg).norm() < 1e-12);
                assert_eq!(a.et_max, 0.0);
            }
            let rep = constitutive_checks(&avgs, SymTensor2::real_isotropic(1.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0));
            assert!(rep.b_max < 1e-12);
            d_err.push(rep.d_max);
            d_sym.push(rep.d_symmetric_median);
            let stack = LayerStack::single(mesh.lattice.a, mesh.lattice.b, C64::new(1.0, 0.0), C64::new(1.0, 0.0)).unwrap();
            let hom = LayeredField::solve(&wave, &stack).unwrap();
            let err = twoscale_field_error(&sol, &mesh, &hom, C64::new(1.0, 0.0));
            let area = (mesh.x_plus - mesh.x_minus) * 2.0 * std::f64::consts::PI;
            assert!(err / area.sqrt() < 2e-3, "{err}");
        }
        // lines at one offset see the plane-wave drift at first order in the
        // cell size; the two-offset mean at second order
        assert!(d_err[0] / d_err[1] > 1.8, "{d_err:?}");
        assert!(d_sym[0] < 1e-2 && d_sym[0] / d_sym[1] > 3.5, "{d_sym:?}");
    }

    #[test]
    fn constant_fields_satisfy_the_constitutive_laws_exactly() {
        let mesh = strip(0.0, 2, 4);
        let wave = WaveParams::normal(0.8).unwrap();
        let mut mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SimpleRing { rho: 0.1 });
        mats.eps_matrix = SymTensor2 {
            xx: C64::new(2.0, 0.1),
            xy: C64::new(0.3, 0.0),
            yy: C64::new(1.5, 0.2),
        };
        mats.mu_matrix = C64::new(1.7, 0.4);
        let mut sol = assemble_and_solve(&mesh, &mats, &wave, mesh.lattice.eta, 4).unwrap();
        let (al, be) = (C64::new(0.4, -1.1), C64::new(2.0, 0.5));
        sol.h = mesh.nodes.iter().map(|p| al * p[0] + be * p[1]).collect();
        let avgs = compute_cell_averages(&sol, &mesh, DEFAULT_OFFSETS).unwrap();
        let rep = constitutive_checks(&avgs, mats.eps_matrix, mats.mu_matrix, C64::new(1.0, 0.0));
        assert!(rep.d_max < 1e-12, "{}", rep.d_max);
        assert!(rep.b_max < 1e-12);
        assert!(rep.offset_spread_median < 1e-12);
    }

    #[test]
    fn averages_are_linear_in_the_field() {
        let mesh = strip(0.3, 2, 2);
        let wave = WaveParams::normal(0.8).unwrap();
        let mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SimpleRing { rho: 0.1 });
        let sol = assemble_and_solve(&mesh, &mats, &wave, mesh.lattice.eta, 6).unwrap();
        let alpha = C64::new(-0.7, 2.3);
        let mut scaled = sol.clone();
        scaled.h.iter_mut().for_each(|v| *v *= alpha);
        let a = compute_cell_averages(&sol, &mesh, DEFAULT_OFFSETS).unwrap();
        let b = compute_cell_averages(&scaled, &mesh, DEFAULT_OFFSETS).unwrap();
        let close = |x: C64, y: C64| (x * alpha - y).norm() <= 1e-12 * (1.0 + y.norm());
        for (x, y) in a.iter().zip(&b) {
            assert!(close(x.h_e_avg, y.h_e_avg) && close(x.h_i_avg.unwrap(), y.h_i_avg.unwrap()) && close(x.b_avg, y.b_avg));
            for o in 0..2 {
                for i in 0..2 {
                    assert!(close(x.e_avg[o][i], y.e_avg[o][i]) && close(x.d_avg[o][i], y.d_avg[o][i]));
                }
            }
            assert!(close(x.j_mean, y.j_mean));
            assert!((x.j_std * alpha.norm() - y.j_std).abs() < 1e-12 * (1.0 + y.j_std));
        }
    }

    #[test]
    fn degenerate_convention() {
        assert_eq!(relative(0.0, 1e-16, 1e-16), 0.0);
        assert_eq!(relative(2.0, 1.0, 1.0), 0.5);
        assert_eq!(relative(0.0, 2.0, 1.0), 0.5);
        let mut v = vec![3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&mut v), 2.5);
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let mesh = strip(0.3, 1, 2);
        let wave = WaveParams::normal(0.8).unwrap();
        let mats = MaterialSet::uniform(1.0, 1.0, SurfaceModel::SimpleRing { rho: 0.1 });
        let sol = assemble_and_solve(&mesh, &mats, &wave, mesh.lattice.eta, 6).unwrap();
        let csv = averages_csv(&compute_cell_averages(&sol, &mesh, DEFAULT_OFFSETS).unwrap());
        let cols = AVERAGES_HEADER.split(',').count();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.split(',').count() == cols));
    }
}
