//! Linear triangle helpers shared by the cell and strip solvers.

use crate::geometry::Point;

/// Gradients of the three barycentric basis functions and the signed area.
#[inline]
pub fn p1_gradients(p: [Point; 3]) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = p;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let area = 0.5 * det;
    let g = [
        [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
        [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
        [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
    ];
    (g, area)
}

/// `∇⊥ = (−∂₂, ∂₁)` applied to a gradient.
#[inline]
pub fn rot(g: [f64; 2]) -> [f64; 2] {
    [-g[1], g[0]]
}

/// P1 mass matrix of a triangle of area `area`.
#[inline]
pub fn p1_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// Degree-4 symmetric rule on the reference triangle: barycentric points
/// and weights summing to one.
pub const QUAD4: [([f64; 3], f64); 6] = {
    const A: f64 = 0.445_948_490_915_965;
    const B: f64 = 0.091_576_213_509_771;
    const WA: f64 = 0.223_381_589_678_011;
    const WB: f64 = 0.109_951_743_655_322;
    [
        ([A, A, 1.0 - 2.0 * A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([1.0 - 2.0 * A, A, A], WA),
        ([B, B, 1.0 - 2.0 * B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([1.0 - 2.0 * B, B, B], WB),
    ]
};

#[inline]
pub fn bary_point(p: [Point; 3], l: [f64; 3]) -> Point {
    [
        l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
        l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_reproduce_linear_functions() {
        let p = [[0.1, 0.2], [0.9, 0.3], [0.4, 0.8]];
        let (g, area) = p1_gradients(p);
        assert!(area > 0.0);
        let f = |q: Point| 3.0 * q[0] - 2.0 * q[1] + 1.0;
        let gx: f64 = (0..3).map(|i| f(p[i]) * g[i][0]).sum();
        let gy: f64 = (0..3).map(|i| f(p[i]) * g[i][1]).sum();
        assert!((gx - 3.0).abs() < 1e-13 && (gy + 2.0).abs() < 1e-13);
    }

    #[test]
    fn quadrature_is_degree_four() {
        let p = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        // ∫ x⁴ over the unit right triangle is 1/30, ∫ x²y² is 1/180
        let (mut s1, mut s2) = (0.0, 0.0);
        for (l, w) in QUAD4 {
            let q = bary_point(p, l);
            s1 += 0.5 * w * q[0].powi(4);
            s2 += 0.5 * w * q[0] * q[0] * q[1] * q[1];
        }
        assert!((s1 - 1.0 / 30.0).abs() < 1e-12);
        assert!((s2 - 1.0 / 180.0).abs() < 1e-12);
    }
}
