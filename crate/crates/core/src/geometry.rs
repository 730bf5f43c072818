//! Unit-cell geometry: the inclusion `D ⊂ Q = [0,1]²` bounded by the
//! resonator curve `∂D`, and its complement `D* = Q \ D`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

pub const CELL_CENTER: Point = [0.5, 0.5];

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Circle { radius: f64, n_segments: usize },
    Polygon,
}

/// Inclusion geometry. Circles keep their analytic area and perimeter;
/// every geometry also carries a counter-clockwise boundary polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGeometry {
    shape: Shape,
    vertices: Vec<Point>,
}

impl CellGeometry {
    /// Circle centred in the cell. `radius = 0` gives an empty inclusion.
    pub fn circle(radius: f64, n_segments: usize) -> Result<Self> {
        if !(0.0..0.5).contains(&radius) {
            return Err(Error::InvalidGeometry(format!("circle radius must lie in [0, 0.5), got {radius}")));
        }
        if n_segments < 3 {
            return Err(Error::InvalidGeometry("circle needs at least 3 segments".into()));
        }
        let vertices = if radius == 0.0 {
            Vec::new()
        } else {
            circle_points(radius, n_segments)
        };
        Ok(CellGeometry {
            shape: Shape::Circle { radius, n_segments },
            vertices,
        })
    }

    /// Simple closed counter-clockwise polyline strictly inside `(0,1)²`.
    /// The closing segment is implicit.
    pub fn polygon(vertices: Vec<Point>) -> Result<Self> {
        validate_polygon(&vertices)?;
        Ok(CellGeometry {
            shape: Shape::Polygon,
            vertices,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn radius(&self) -> Option<f64> {
        match self.shape {
            Shape::Circle { radius, .. } => Some(radius),
            Shape::Polygon => None,
        }
    }

    pub fn n_segments(&self) -> usize {
        match self.shape {
            Shape::Circle { n_segments, .. } => n_segments,
            Shape::Polygon => self.vertices.len(),
        }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Area of `D`: analytic for circles, shoelace for polylines.
    pub fn area(&self) -> f64 {
        match self.shape {
            Shape::Circle { radius, .. } => PI * radius * radius,
            Shape::Polygon => polygon_area(&self.vertices),
        }
    }

    pub fn exterior_area(&self) -> f64 {
        1.0 - self.area()
    }

    /// Length of `∂D`.
    pub fn perimeter(&self) -> f64 {
        match self.shape {
            Shape::Circle { radius, .. } => 2.0 * PI * radius,
            Shape::Polygon => polygon_perimeter(&self.vertices),
        }
    }

    /// Area of the boundary polyline (differs from [`area`](Self::area) for circles
    /// by the polygonal approximation error).
    pub fn polyline_area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    /// Declared tolerance on `area(D) + area(D*) = 1` for the polyline.
    pub fn polyline_area_tolerance(&self) -> f64 {
        match self.shape {
            Shape::Circle { radius, n_segments } => {
                let t = 2.0 * PI / n_segments as f64;
                PI * radius * radius * (1.0 - t.sin() / t) + 1e-14
            }
            Shape::Polygon => 1e-14,
        }
    }

    /// Indicator of the inclusion, `χ_i(y)`, for `y` in the unit cell
    /// (periodically extended).
    pub fn chi_interior(&self, y: Point) -> f64 {
        let y = [y[0].rem_euclid(1.0), y[1].rem_euclid(1.0)];
        let inside = match self.shape {
            Shape::Circle { radius, .. } => {
                let dx = y[0] - CELL_CENTER[0];
                let dy = y[1] - CELL_CENTER[1];
                dx * dx + dy * dy < radius * radius
            }
            Shape::Polygon => point_in_polygon(&self.vertices, y),
        };
        if inside {
            1.0
        } else {
            0.0
        }
    }

    pub fn chi_exterior(&self, y: Point) -> f64 {
        1.0 - self.chi_interior(y)
    }

    /// The same inclusion described by its boundary polyline only.
    pub fn as_polygon(&self) -> Result<Self> {
        Self::polygon(self.vertices.clone())
    }

    /// Composite midpoint rule for `∮_{∂D} f ds` along the polyline.
    pub fn boundary_integral<T>(&self, f: impl Fn(Point) -> T) -> T
    where
        T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
    {
        let n = self.vertices.len();
        let mut acc = T::default();
        for k in 0..n {
            let p = self.vertices[k];
            let q = self.vertices[(k + 1) % n];
            let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
            acc = acc + f([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]) * len;
        }
        acc
    }

    /// Distance from the cell centre to the boundary along the ray at angle
    /// `theta`, for inclusions star-shaped about the centre.
    pub fn ray_radius(&self, theta: f64) -> Result<f64> {
        if let Shape::Circle { radius, .. } = self.shape {
            return Ok(radius);
        }
        let d = [theta.cos(), theta.sin()];
        let n = self.vertices.len();
        let mut best: Option<f64> = None;
        for k in 0..n {
            let p = sub(self.vertices[k], CELL_CENTER);
            let q = sub(self.vertices[(k + 1) % n], CELL_CENTER);
            let e = sub(q, p);
            let den = cross(d, e);
            if den.abs() < 1e-300 {
                continue;
            }
            let t = cross(p, e) / den;
            let s = cross(p, d) / den;
            if t > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s) {
                best = Some(best.map_or(t, |b: f64| b.min(t)));
            }
        }
        best.ok_or_else(|| Error::InvalidGeometry(format!("ray at angle {theta} misses the boundary")))
    }

    /// Inclusions that can be meshed by rays from the cell centre.
    pub fn is_star_shaped_about_center(&self) -> bool {
        if matches!(self.shape, Shape::Circle { .. }) {
            return true;
        }
        let n = self.vertices.len();
        (0..n).all(|k| {
            let p = sub(self.vertices[k], CELL_CENTER);
            let q = sub(self.vertices[(k + 1) % n], CELL_CENTER);
            cross(p, q) > 0.0
        })
    }
}

/// Points on the centred circle at angles `π/4 + 2πj/n`.
pub fn circle_points(radius: f64, n: usize) -> Vec<Point> {
    (0..n)
        .map(|j| {
            let t = PI / 4.0 + 2.0 * PI * j as f64 / n as f64;
            [CELL_CENTER[0] + radius * t.cos(), CELL_CENTER[1] + radius * t.sin()]
        })
        .collect()
}

pub fn polygon_area(v: &[Point]) -> f64 {
    let n = v.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n).map(|k| cross(v[k], v[(k + 1) % n])).sum::<f64>()
}

pub fn polygon_perimeter(v: &[Point]) -> f64 {
    let n = v.len();
    (0..n).map(|k| dist(v[k], v[(k + 1) % n])).sum()
}

pub fn point_in_polygon(v: &[Point], p: Point) -> bool {
    let n = v.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn validate_polygon(v: &[Point]) -> Result<()> {
    let n = v.len();
    if n < 3 {
        return Err(Error::InvalidGeometry("polyline needs at least 3 vertices".into()));
    }
    for p in v {
        if !(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0) {
            return Err(Error::InvalidGeometry(format!(
                "vertex ({}, {}) is not strictly inside the unit cell",
                p[0], p[1]
            )));
        }
    }
    if polygon_area(v) <= 0.0 {
        return Err(Error::InvalidGeometry(
            "boundary must be oriented counter-clockwise (clockwise data is rejected)".into(),
        ));
    }
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        if dist(a, b) == 0.0 {
            return Err(Error::InvalidGeometry(format!("repeated vertex at index {i}")));
        }
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (v[j], v[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return Err(Error::InvalidGeometry(format!("edges {i} and {j} intersect; boundary is not simple")));
            }
        }
    }
    Ok(())
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = cross(sub(b, a), sub(c, a));
    let o2 = cross(sub(b, a), sub(d, a));
    let o3 = cross(sub(d, c), sub(a, c));
    let o4 = cross(sub(d, c), sub(b, c));
    if o1 == 0.0 && o2 == 0.0 {
        // collinear: overlap of the projections onto the segment direction
        let u = sub(b, a);
        let t = |p: Point| u[0] * (p[0] - a[0]) + u[1] * (p[1] - a[1]);
        let (lo, hi) = (t(c).min(t(d)), t(c).max(t(d)));
        return hi >= 0.0 && lo <= u[0] * u[0] + u[1] * u[1];
    }
    (o1 * o2 <= 0.0) && (o3 * o4 <= 0.0)
}

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
