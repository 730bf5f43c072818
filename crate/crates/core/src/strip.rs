//! Mesh of one `2π` period of the slab plus air margins.
//!
//! Every micro-cell is an exact `η`-scaled translate of the master
//! [`CellMesh`]; nodes on cell boundaries are merged through integer
//! lattice keys, so shared nodes coincide bit for bit. Resonator interface
//! nodes keep their exterior and interior copies. Nodes on `x₂ = 2π` are
//! slaves of their partners on `x₂ = 0`.

use std::collections::HashMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::mesh::{mesh_text, CellMesh, CellRegion};
use crate::model::ValidatedLattice;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StripRegion {
    Air,
    Matrix,
    Interior,
}

impl StripRegion {
    pub fn name(self) -> &'static str {
        match self {
            StripRegion::Air => "air",
            StripRegion::Matrix => "matrix",
            StripRegion::Interior => "interior",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "air" => Some(StripRegion::Air),
            "matrix" => Some(StripRegion::Matrix),
            "interior" => Some(StripRegion::Interior),
            _ => None,
        }
    }
}

/// One straight piece of a resonator boundary in a given cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfaceSegment {
    pub cell: usize,
    /// Exterior copies of the two end nodes.
    pub ext: [usize; 2],
    /// Interior copies of the same nodes.
    pub int: [usize; 2],
}

#[derive(Clone, Debug)]
pub struct StripMesh {
    pub lattice: ValidatedLattice,
    pub master: CellMesh,
    pub margin_cells: usize,
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub regions: Vec<StripRegion>,
    pub element_cell: Vec<Option<usize>>,
    /// `cell_nodes[c][k]` is the global node of master node `k` in cell `c`.
    pub cell_nodes: Vec<Vec<usize>>,
    /// Elements of cell `c`, in master-triangle order.
    pub cell_elements: Vec<Range<usize>>,
    pub interface: Vec<InterfaceSegment>,
    /// Nodes on `Γ−` and `Γ+` ordered by `x₂`, from `0` to `2π` inclusive.
    pub gamma_minus: Vec<usize>,
    pub gamma_plus: Vec<usize>,
    pub x_minus: f64,
    pub x_plus: f64,
    /// Master partner on `x₂ = 0` of each node on `x₂ = 2π`.
    pub slave_of: Vec<Option<usize>>,
}

impl StripMesh {
    /// Cells are numbered `c = i₁·N₂ + i₂` with `i₁` across the slab.
    pub fn build(master: &CellMesh, lattice: ValidatedLattice, margin_cells: usize) -> Result<Self> {
        if margin_cells == 0 {
            return Err(Error::Mesh("air margins must be at least one cell wide".into()));
        }
        let n = master.n_side as i64;
        let (n1, n2) = (lattice.cells_across, lattice.cells_per_period);
        let eta = lattice.eta;
        let step = eta / n as f64;
        let m = margin_cells as i64;
        let grid_point = |ix: i64, iy: i64| -> Point { [lattice.a + ix as f64 * step, iy as f64 * step] };

        let mut nodes: Vec<Point> = Vec::new();
        let mut keys: HashMap<(i64, i64), usize> = HashMap::new();
        let mut key_of_node: Vec<Option<(i64, i64)>> = Vec::new();
        let mut node_at = |ix: i64, iy: i64, nodes: &mut Vec<Point>, key_of_node: &mut Vec<Option<(i64, i64)>>| -> usize {
            *keys.entry((ix, iy)).or_insert_with(|| {
                nodes.push(grid_point(ix, iy));
                key_of_node.push(Some((ix, iy)));
                nodes.len() - 1
            })
        };

        let mut triangles = Vec::new();
        let mut regions = Vec::new();
        let mut element_cell = Vec::new();
        let mut cell_nodes = Vec::with_capacity(n1 * n2);
        let mut cell_elements = Vec::with_capacity(n1 * n2);
        let mut interface = Vec::new();

        let boundary: HashMap<usize, (i64, i64)> = master.square_boundary.iter().map(|&b| (b, master.boundary_key(b))).collect();
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let c = cell_nodes.len();
                let origin = [lattice.a + i1 as f64 * eta, i2 as f64 * eta];
                let map: Vec<usize> = (0..master.n_nodes())
                    .map(|k| match boundary.get(&k) {
                        Some(&(sx, sy)) => node_at(i1 as i64 * n + sx, i2 as i64 * n + sy, &mut nodes, &mut key_of_node),
                        None => {
                            let p = master.nodes[k];
                            nodes.push([origin[0] + eta * p[0], origin[1] + eta * p[1]]);
                            key_of_node.push(None);
                            nodes.len() - 1
                        }
                    })
                    .collect();
                let start = triangles.len();
                for (t, r) in master.triangles.iter().zip(&master.regions) {
                    triangles.push(t.map(|k| map[k]));
                    regions.push(match r {
                        CellRegion::Exterior => StripRegion::Matrix,
                        CellRegion::Interior => StripRegion::Interior,
                    });
                    element_cell.push(Some(c));
                }
                cell_elements.push(start..triangles.len());
                let nb = master.interface.len();
                for j in 0..nb {
                    let (e0, i0) = master.interface[j];
                    let (e1, i1n) = master.interface[(j + 1) % nb];
                    interface.push(InterfaceSegment {
                        cell: c,
                        ext: [map[e0], map[e1]],
                        int: [map[i0], map[i1n]],
                    });
                }
                cell_nodes.push(map);
            }
        }

        // air margins: uniform grids with the cell boundary spacing
        let ny = n2 as i64 * n;
        let left = (-m * n, 0);
        let right = (n1 as i64 * n, (n1 as i64 + m) * n);
        for (x0, x1) in [left, right] {
            for ix in x0..x1 {
                for iy in 0..ny {
                    let a = node_at(ix, iy, &mut nodes, &mut key_of_node);
                    let b = node_at(ix + 1, iy, &mut nodes, &mut key_of_node);
                    let c = node_at(ix + 1, iy + 1, &mut nodes, &mut key_of_node);
                    let d = node_at(ix, iy + 1, &mut nodes, &mut key_of_node);
                    for t in [[a, b, c], [a, c, d]] {
                        triangles.push(t);
                        regions.push(StripRegion::Air);
                        element_cell.push(None);
                    }
                }
            }
        }
        let index: HashMap<(i64, i64), usize> = key_of_node.iter().enumerate().filter_map(|(i, k)| k.map(|k| (k, i))).collect();
        let gamma_minus: Vec<usize> = (0..=ny).map(|iy| index[&(-m * n, iy)]).collect();
        let gamma_plus: Vec<usize> = (0..=ny).map(|iy| index[&((n1 as i64 + m) * n, iy)]).collect();
        let mut slave_of = vec![None; nodes.len()];
        for (i, k) in key_of_node.iter().enumerate() {
            if let Some((ix, iy)) = k {
                if *iy == ny {
                    slave_of[i] = Some(index[&(*ix, 0)]);
                }
            }
        }
        let mesh = StripMesh {
            lattice,
            master: master.clone(),
            margin_cells,
            x_minus: nodes[gamma_minus[0]][0],
            x_plus: nodes[gamma_plus[0]][0],
            nodes,
            triangles,
            regions,
            element_cell,
            cell_nodes,
            cell_elements,
            interface,
            gamma_minus,
            gamma_plus,
            slave_of,
        };
        mesh.check()?;
        Ok(mesh)
    }

    fn check(&self) -> Result<()> {
        let mut area = 0.0;
        for (k, t) in self.triangles.iter().enumerate() {
            let a = crate::mesh::triangle_area(&self.nodes, t);
            if !(a > 0.0) {
                return Err(Error::Mesh(format!("strip element {k} is degenerate")));
            }
            area += a;
        }
        let expected = (self.x_plus - self.x_minus) * 2.0 * std::f64::consts::PI;
        if (area - expected).abs() > 1e-9 * expected {
            return Err(Error::Mesh(format!("strip elements cover {area}, expected {expected}")));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cell_nodes.len()
    }

    pub fn cell_index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.lattice.cells_per_period + i2
    }

    /// `(i₁, i₂)` of cell `c`.
    pub fn cell_position(&self, c: usize) -> (usize, usize) {
        (c / self.lattice.cells_per_period, c % self.lattice.cells_per_period)
    }

    pub fn cell_origin(&self, c: usize) -> Point {
        let (i1, i2) = self.cell_position(c);
        [self.lattice.a + i1 as f64 * self.lattice.eta, i2 as f64 * self.lattice.eta]
    }

    pub fn element_area(&self, e: usize) -> f64 {
        crate::mesh::triangle_area(&self.nodes, &self.triangles[e])
    }

    /// `x₂` coordinates of the `Γ±` trace nodes.
    pub fn gamma_y(&self) -> Vec<f64> {
        self.gamma_minus.iter().map(|&k| self.nodes[k][1]).collect()
    }

    pub fn write_text(&self) -> String {
        let regions: Vec<&str> = self.regions.iter().map(|r| r.name()).collect();
        let pairs: Vec<(usize, usize)> = self.interface.iter().map(|s| (s.ext[0], s.int[0])).collect();
        mesh_text(&self.nodes, &self.triangles, &regions, &pairs)
    }
}
