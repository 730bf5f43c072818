//! Boundary-fitted triangulation of the unit cell.
//!
//! The cell is meshed as two O-grids sharing the sampled resonator curve:
//! the exterior ring runs from `∂D` out to `∂Q`, the interior ring from a
//! small structured square in the centre out to `∂D`. Nodes on `∂D` exist
//! twice (one copy per side), so the same mesh serves the exterior cell
//! problem and the double-noded scattering solve. The outer square carries
//! `n_side` equal segments per side, which makes opposite sides periodic
//! translates of each other. The construction is invariant under rotation
//! by 90° about the cell centre.
//!
//! # Text format
//!
//! [`CellMesh::write_text`] emits
//!
//! ```text
//! # metahomog mesh v1
//! nodes <N>
//! <x> <y>                  (N lines)
//! triangles <M>
//! <a> <b> <c> <region>     (M lines, region = exterior | interior)
//! interface <K>
//! <exterior> <interior>    (K lines, counter-clockwise along the boundary)
//! ```
//!
//! with zero-based node indices and 17 significant digits.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{self, CellGeometry, Point, CELL_CENTER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellRegion {
    Exterior,
    Interior,
}

impl CellRegion {
    pub fn name(self) -> &'static str {
        match self {
            CellRegion::Exterior => "exterior",
            CellRegion::Interior => "interior",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CellMesh {
    pub n_side: usize,
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub regions: Vec<CellRegion>,
    /// `(exterior copy, interior copy)` of each node on `∂D`, counter-clockwise.
    pub interface: Vec<(usize, usize)>,
    /// Nodes on `∂Q`, counter-clockwise from the corner `(1, 1)`.
    pub square_boundary: Vec<usize>,
}

impl CellMesh {
    /// Mesh with roughly `mesh_h` spacing on `∂Q`. The number of boundary
    /// segments per side is `ceil(1/mesh_h)` rounded up to an even number
    /// (at least 4); `∂D` is sampled at `4·n_side` rays from the centre.
    pub fn build(geom: &CellGeometry, mesh_h: f64) -> Result<Self> {
        if !(mesh_h > 0.0 && mesh_h.is_finite()) {
            return Err(Error::Mesh(format!("mesh_h must be positive, got {mesh_h}")));
        }
        let mut n_side = (1.0 / mesh_h).ceil().max(4.0) as usize;
        if n_side % 2 == 1 {
            n_side += 1;
        }
        Self::build_with_sides(geom, n_side)
    }

    pub fn build_with_sides(geom: &CellGeometry, n_side: usize) -> Result<Self> {
        if n_side < 4 || n_side % 2 == 1 {
            return Err(Error::Mesh(format!("n_side must be even and >= 4, got {n_side}")));
        }
        if geom.is_empty() {
            return Ok(Self::plain_square(n_side));
        }
        if !geom.is_star_shaped_about_center() {
            return Err(Error::Mesh(
                "the inclusion must be star-shaped about the cell centre to be meshed".into(),
            ));
        }
        let nb = 4 * n_side;
        let curve: Vec<Point> = match geom.radius() {
            Some(r) => geometry::circle_points(r, nb),
            None => (0..nb)
                .map(|j| {
                    let t = PI / 4.0 + 2.0 * PI * j as f64 / nb as f64;
                    geom.ray_radius(t).map(|r| [CELL_CENTER[0] + r * t.cos(), CELL_CENTER[1] + r * t.sin()])
                })
                .collect::<Result<_>>()?,
        };
        let r_min = curve.iter().map(|p| geometry::dist(*p, CELL_CENTER)).fold(f64::INFINITY, f64::min);
        let outer = square_points(0.5, n_side);
        let inner = square_points(0.5 * r_min, n_side);

        let mut b = Builder::default();

        // interior: structured centre square
        let grid = b.grid(CELL_CENTER, 0.5 * r_min, n_side, CellRegion::Interior);
        let inner_ids: Vec<usize> = perimeter_indices(n_side).iter().map(|&(i, j)| grid[j * (n_side + 1) + i]).collect();
        let interior_curve = b.push_nodes(&curve);
        b.ring(&inner_ids, &interior_curve, &inner, &curve, CellRegion::Interior);

        // exterior: curve out to the cell boundary
        let exterior_curve = b.push_nodes(&curve);
        let square_ids = b.push_nodes(&outer);
        b.ring(&exterior_curve, &square_ids, &curve, &outer, CellRegion::Exterior);

        let interface = exterior_curve.iter().copied().zip(interior_curve.iter().copied()).collect();
        let mesh = CellMesh {
            n_side,
            nodes: b.nodes,
            triangles: b.triangles,
            regions: b.regions,
            interface,
            square_boundary: square_ids,
        };
        mesh.check()?;
        Ok(mesh)
    }

    fn plain_square(n_side: usize) -> Self {
        let mut b = Builder::default();
        let grid = b.grid(CELL_CENTER, 0.5, n_side, CellRegion::Exterior);
        let square_boundary = perimeter_indices(n_side).iter().map(|&(i, j)| grid[j * (n_side + 1) + i]).collect();
        CellMesh {
            n_side,
            nodes: b.nodes,
            triangles: b.triangles,
            regions: b.regions,
            interface: Vec::new(),
            square_boundary,
        }
    }

    fn check(&self) -> Result<()> {
        for (k, t) in self.triangles.iter().enumerate() {
            let a = triangle_area(&self.nodes, t);
            if !(a > 0.0) {
                return Err(Error::Mesh(format!("triangle {k} is degenerate or inverted (area {a:e})")));
            }
        }
        let total: f64 = (0..self.triangles.len()).map(|k| self.element_area(k)).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Mesh(format!("elements cover area {total}, expected 1")));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_area(&self, e: usize) -> f64 {
        triangle_area(&self.nodes, &self.triangles[e])
    }

    /// Total area of elements in `region`.
    pub fn region_area(&self, region: CellRegion) -> f64 {
        (0..self.triangles.len()).filter(|&e| self.regions[e] == region).map(|e| self.element_area(e)).sum()
    }

    /// Sampled resonator curve as meshed.
    pub fn meshed_boundary(&self) -> Vec<Point> {
        self.interface.iter().map(|&(e, _)| self.nodes[e]).collect()
    }

    /// Integer lattice coordinates `(round(x·n), round(y·n))` of a node on `∂Q`.
    pub fn boundary_key(&self, node: usize) -> (i64, i64) {
        let p = self.nodes[node];
        let n = self.n_side as f64;
        ((p[0] * n).round() as i64, (p[1] * n).round() as i64)
    }

    /// Element containing `y` (first match), if any.
    pub fn locate(&self, y: Point) -> Option<usize> {
        (0..self.triangles.len()).find(|&e| {
            let [a, b, c] = self.triangles[e].map(|i| self.nodes[i]);
            let tol = -1e-12;
            let l0 = geometry::cross(geometry::sub(b, a), geometry::sub(y, a));
            let l1 = geometry::cross(geometry::sub(c, b), geometry::sub(y, b));
            let l2 = geometry::cross(geometry::sub(a, c), geometry::sub(y, c));
            l0 >= tol && l1 >= tol && l2 >= tol
        })
    }

    pub fn write_text(&self) -> String {
        let regions: Vec<&str> = self.regions.iter().map(|r| r.name()).collect();
        mesh_text(&self.nodes, &self.triangles, &regions, &self.interface)
    }
}

pub(crate) fn mesh_text(nodes: &[Point], triangles: &[[usize; 3]], regions: &[&str], interface: &[(usize, usize)]) -> String {
    let mut s = String::new();
    s.push_str("# metahomog mesh v1\n");
    let _ = writeln!(s, "nodes {}", nodes.len());
    for p in nodes {
        let _ = writeln!(s, "{:.16e} {:.16e}", p[0], p[1]);
    }
    let _ = writeln!(s, "triangles {}", triangles.len());
    for (t, r) in triangles.iter().zip(regions) {
        let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], r);
    }
    let _ = writeln!(s, "interface {}", interface.len());
    for (e, i) in interface {
        let _ = writeln!(s, "{e} {i}");
    }
    s
}

/// Mesh read back from the text format.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshText {
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub regions: Vec<String>,
    pub interface: Vec<(usize, usize)>,
}

pub fn read_mesh_text(text: &str) -> Result<MeshText> {
    fn bad(msg: &str) -> Error {
        Error::Mesh(format!("mesh text: {msg}"))
    }
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let mut section = |name: &str| -> Result<(usize, Vec<Vec<String>>)> {
        let head = lines.next().ok_or_else(|| bad("unexpected end"))?;
        let mut it = head.split_whitespace();
        if it.next() != Some(name) {
            return Err(bad(&format!("expected section '{name}'")));
        }
        let n: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("missing count"))?;
        let rows = (0..n)
            .map(|_| {
                lines
                    .next()
                    .map(|l| l.split_whitespace().map(String::from).collect())
                    .ok_or_else(|| bad(&format!("section '{name}' is truncated")))
            })
            .collect::<Result<_>>()?;
        Ok((n, rows))
    };
    fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
        s.parse().map_err(|_| bad(&format!("cannot parse '{s}'")))
    }
    let (_, rows) = section("nodes")?;
    let nodes = rows
        .iter()
        .map(|r| match r.as_slice() {
            [x, y] => Ok([num(x)?, num(y)?]),
            _ => Err(bad("node line must have 2 values")),
        })
        .collect::<Result<Vec<Point>>>()?;
    let (_, rows) = section("triangles")?;
    let mut triangles = Vec::with_capacity(rows.len());
    let mut regions = Vec::with_capacity(rows.len());
    for r in &rows {
        match r.as_slice() {
            [a, b, c, reg] => {
                triangles.push([num(a)?, num(b)?, num(c)?]);
                regions.push(reg.clone());
            }
            _ => return Err(bad("triangle line must have 4 fields")),
        }
    }
    let (_, rows) = section("interface")?;
    let interface = rows
        .iter()
        .map(|r| match r.as_slice() {
            [e, i] => Ok((num(e)?, num(i)?)),
            _ => Err(bad("interface line must have 2 fields")),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeshText {
        nodes,
        triangles,
        regions,
        interface,
    })
}

pub(crate) fn triangle_area(nodes: &[Point], t: &[usize; 3]) -> f64 {
    let [a, b, c] = t.map(|i| nodes[i]);
    0.5 * geometry::cross(geometry::sub(b, a), geometry::sub(c, a))
}

/// Perimeter of the square `[c − h, c + h]²` with `n_side` segments per
/// side, counter-clockwise from the corner `(c + h, c + h)`.
fn square_points(half: f64, n_side: usize) -> Vec<Point> {
    perimeter_indices(n_side)
        .into_iter()
        .map(|(i, j)| {
            let s = 2.0 * half / n_side as f64;
            [CELL_CENTER[0] - half + s * i as f64, CELL_CENTER[1] - half + s * j as f64]
        })
        .map(|p| {
            // snap the unit cell boundary onto exact lattice values
            if half == 0.5 {
                let n = n_side as f64;
                [(p[0] * n).round() / n, (p[1] * n).round() / n]
            } else {
                p
            }
        })
        .collect()
}

/// Grid indices `(i, j)` of the square perimeter in the same order as
/// [`square_points`].
fn perimeter_indices(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(4 * n);
    for s in 0..n {
        out.push((n - s, n));
    }
    for s in 0..n {
        out.push((0, n - s));
    }
    for s in 0..n {
        out.push((s, 0));
    }
    for s in 0..n {
        out.push((n, s));
    }
    out
}

#[derive(Default)]
struct Builder {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    regions: Vec<CellRegion>,
}

impl Builder {
    fn push_nodes(&mut self, pts: &[Point]) -> Vec<usize> {
        let start = self.nodes.len();
        self.nodes.extend_from_slice(pts);
        (start..self.nodes.len()).collect()
    }

    fn tri(&mut self, mut t: [usize; 3], region: CellRegion) {
        if triangle_area(&self.nodes, &t) < 0.0 {
            t.swap(1, 2);
        }
        self.triangles.push(t);
        self.regions.push(region);
    }

    /// `(n+1)²` grid on `[c − h, c + h]²`; diagonals point away from the
    /// centre in every quadrant so the pattern is rotation invariant.
    fn grid(&mut self, c: Point, half: f64, n: usize, region: CellRegion) -> Vec<usize> {
        let s = 2.0 * half / n as f64;
        let mut ids = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                let mut p = [c[0] - half + s * i as f64, c[1] - half + s * j as f64];
                if half == 0.5 {
                    p = [i as f64 / n as f64, j as f64 / n as f64];
                }
                ids.push(self.nodes.len());
                self.nodes.push(p);
            }
        }
        let id = |i: usize, j: usize| ids[j * (n + 1) + i];
        let h = n / 2;
        for j in 0..n {
            for i in 0..n {
                let (a, b, cc, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                if (i >= h) == (j >= h) {
                    self.tri([a, b, cc], region);
                    self.tri([a, cc, d], region);
                } else {
                    self.tri([a, b, d], region);
                    self.tri([b, cc, d], region);
                }
            }
        }
        ids
    }

    /// Graded O-grid between two closed loops with matching node counts.
    fn ring(&mut self, from_ids: &[usize], to_ids: &[usize], from: &[Point], to: &[Point], region: CellRegion) {
        let nb = from.len();
        let s0 = geometry::polygon_perimeter(from) / nb as f64;
        let s1 = geometry::polygon_perimeter(to) / nb as f64;
        let lr = (0..nb).map(|j| geometry::dist(from[j], to[j])).sum::<f64>() / nb as f64;
        let ratio = s1 / s0;
        let n_layers = if (ratio - 1.0).abs() < 1e-3 {
            (lr / s0).round().max(1.0) as usize
        } else {
            (lr * ratio.ln() / (s1 - s0)).round().max(1.0) as usize
        };
        let t_of = |k: usize| -> f64 {
            if (ratio - 1.0).abs() < 1e-3 {
                k as f64 / n_layers as f64
            } else {
                (ratio.powf(k as f64 / n_layers as f64) - 1.0) / (ratio - 1.0)
            }
        };
        let mut prev = from_ids.to_vec();
        for k in 1..=n_layers {
            let next = if k == n_layers {
                to_ids.to_vec()
            } else {
                let t = t_of(k);
                let pts: Vec<Point> = (0..nb)
                    .map(|j| [from[j][0] + t * (to[j][0] - from[j][0]), from[j][1] + t * (to[j][1] - from[j][1])])
                    .collect();
                self.push_nodes(&pts)
            };
            for j in 0..nb {
                let jn = (j + 1) % nb;
                let (a, b, c, d) = (prev[j], prev[jn], next[jn], next[j]);
                self.tri([a, b, c], region);
                self.tri([a, c, d], region);
            }
            prev = next;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_mesh_covers_cell_and_regions() {
        let g = CellGeometry::circle(0.3, 64).unwrap();
        let m = CellMesh::build(&g, 1.0 / 16.0).unwrap();
        assert_eq!(m.n_side, 16);
        assert_eq!(m.interface.len(), 64);
        let ai = m.region_area(CellRegion::Interior);
        let poly = geometry::polygon_area(&m.meshed_boundary());
        assert!((ai - poly).abs() < 1e-13);
        assert!((ai + m.region_area(CellRegion::Exterior) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn boundary_nodes_are_periodic() {
        let g = CellGeometry::circle(0.2, 32).unwrap();
        let m = CellMesh::build(&g, 0.1).unwrap();
        let keys: std::collections::HashSet<_> = m.square_boundary.iter().map(|&k| m.boundary_key(k)).collect();
        let n = m.n_side as i64;
        for &(x, y) in &keys {
            if x == 0 {
                assert!(keys.contains(&(n, y)));
            }
            if y == 0 {
                assert!(keys.contains(&(x, n)));
            }
        }
        for &k in &m.square_boundary {
            let p = m.nodes[k];
            let (x, y) = m.boundary_key(k);
            assert_eq!(p[0], x as f64 / n as f64);
            assert_eq!(p[1], y as f64 / n as f64);
        }
    }

    #[test]
    fn no_element_straddles_interface() {
        let g = CellGeometry::circle(0.3, 64).unwrap();
        let m = CellMesh::build(&g, 0.125).unwrap();
        let ext: std::collections::HashSet<usize> = m.interface.iter().map(|p| p.0).collect();
        let int: std::collections::HashSet<usize> = m.interface.iter().map(|p| p.1).collect();
        for (t, r) in m.triangles.iter().zip(&m.regions) {
            for v in t {
                match r {
                    CellRegion::Exterior => assert!(!int.contains(v)),
                    CellRegion::Interior => assert!(!ext.contains(v)),
                }
            }
        }
    }

    #[test]
    fn rotation_invariance() {
        let g = CellGeometry::circle(0.25, 64).unwrap();
        let m = CellMesh::build(&g, 0.125).unwrap();
        let key = |p: Point| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
        let mut tris: std::collections::HashSet<[(i64, i64); 3]> = Default::default();
        for t in &m.triangles {
            let mut k = t.map(|i| key(m.nodes[i]));
            k.sort();
            tris.insert(k);
        }
        for t in &m.triangles {
            let mut k = t.map(|i| {
                let p = m.nodes[i];
                key([1.0 - p[1], p[0]])
            });
            k.sort();
            assert!(tris.contains(&k));
        }
    }

    #[test]
    fn polygon_and_empty_meshes() {
        let sq = vec![[0.3, 0.3], [0.7, 0.3], [0.7, 0.7], [0.3, 0.7]];
        let g = CellGeometry::polygon(sq).unwrap();
        let m = CellMesh::build(&g, 0.1).unwrap();
        assert!((m.region_area(CellRegion::Interior) - 0.16).abs() < 1e-12);
        let e = CellMesh::build(&CellGeometry::circle(0.0, 8).unwrap(), 0.25).unwrap();
        assert!(e.interface.is_empty());
        assert_eq!(e.square_boundary.len(), 16);
        assert!((e.region_area(CellRegion::Exterior) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn non_star_shaped_is_rejected() {
        // a "C" shape that hides part of its boundary from the centre
        let c = vec![[0.2, 0.2], [0.8, 0.2], [0.8, 0.35], [0.35, 0.35], [0.35, 0.65], [0.8, 0.65], [0.8, 0.8], [0.2, 0.8]];
        let g = CellGeometry::polygon(c).unwrap();
        assert!(CellMesh::build(&g, 0.1).is_err());
    }

    #[test]
    fn text_round_trip() {
        let g = CellGeometry::circle(0.2, 16).unwrap();
        let m = CellMesh::build(&g, 0.25).unwrap();
        let back = read_mesh_text(&m.write_text()).unwrap();
        assert_eq!(back.nodes, m.nodes);
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.interface, m.interface);
        assert_eq!(back.regions.iter().filter(|r| *r == "interior").count(), m.regions.iter().filter(|r| **r == CellRegion::Interior).count());
    }

    #[test]
    fn locate_points() {
        let g = CellGeometry::circle(0.2, 16).unwrap();
        let m = CellMesh::build(&g, 0.25).unwrap();
        let e = m.locate([0.5, 0.5]).unwrap();
        assert_eq!(m.regions[e], CellRegion::Interior);
        let e = m.locate([0.05, 0.05]).unwrap();
        assert_eq!(m.regions[e], CellRegion::Exterior);
    }
}
