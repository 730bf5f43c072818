#![allow(dead_code)]

use metahomog::C64;

/// Gaussian elimination with partial pivoting on a small dense system.
pub fn dense_solve<const N: usize>(mut a: [[C64; N]; N], mut b: [C64; N]) -> [C64; N] {
    for k in 0..N {
        let p = (k..N).max_by(|&i, &j| a[i][k].norm().total_cmp(&a[j][k].norm())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..N {
            let f = a[i][k] / a[k][k];
            for j in k..N {
                let t = a[k][j];
                a[i][j] -= f * t;
            }
            let t = b[k];
            b[i] -= f * t;
        }
    }
    let mut x = [C64::new(0.0, 0.0); N];
    for k in (0..N).rev() {
        let s: C64 = (k + 1..N).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Normal-incidence slab `[xa, xb]` of constant `(eps, mu)` in vacuum
/// `(eps0, mu0)`, by direct matching of `h` and `eps⁻¹ ∂₁h` at both faces.
/// Returns `(a, b)` with `h = e^{iνx} + a e^{-iνx}` on the left and
/// `h = b e^{iνx}` on the right.
pub fn airy_oracle(omega: f64, eps0: f64, mu0: f64, xa: f64, xb: f64, eps: C64, mu: C64) -> (C64, C64) {
    let i = C64::new(0.0, 1.0);
    let nu = omega * (eps0 * mu0).sqrt();
    let q = omega * (eps * mu).sqrt();
    let e = |k: C64, x: f64| (i * k * x).exp();
    let nuc = C64::new(nu, 0.0);
    // unknowns: a, c_plus, c_minus, b
    let m = [
        [e(-nuc, xa), -e(q, xa), -e(-q, xa), C64::new(0.0, 0.0)],
        [-i * nu / eps0 * e(-nuc, xa), -i * q / eps * e(q, xa), i * q / eps * e(-q, xa), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), e(q, xb), e(-q, xb), -e(nuc, xb)],
        [C64::new(0.0, 0.0), i * q / eps * e(q, xb), -i * q / eps * e(-q, xb), -i * nu / eps0 * e(nuc, xb)],
    ];
    let rhs = [-e(nuc, xa), -i * nu / eps0 * e(nuc, xa), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
    let x = dense_solve(m, rhs);
    (x[0], x[3])
}
