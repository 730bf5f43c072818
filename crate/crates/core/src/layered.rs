//! Scattering by an `x₂`-invariant stack of homogeneous layers.
//!
//! Each Bloch order solves `(ε⁻¹h′)′ + (ω²μ − (m+κ)²/ε) h = 0` across the
//! stack with `h` and `ε⁻¹∂₁h` continuous. Amplitudes come from a
//! Redheffer-composed scattering matrix; the field inside the slab comes
//! from a separate global system with locally normalized exponentials.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{SymTensor2, WaveParams, C64, I};
use crate::sparse::dense_solve;

const SINGULAR_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layer {
    pub x_left: f64,
    pub x_right: f64,
    pub eps: C64,
    pub mu: C64,
}

impl Layer {
    /// Layer with tensor permittivity; anisotropic tensors are rejected.
    pub fn from_tensor(x_left: f64, x_right: f64, eps: SymTensor2, mu: C64) -> Result<Self> {
        if !eps.is_isotropic(1e-8) {
            return Err(Error::Anisotropic(format!(
                "eps* = [[{}, {}], [{}, {}]]",
                eps.xx, eps.xy, eps.xy, eps.yy
            )));
        }
        Ok(Layer {
            x_left,
            x_right,
            eps: 0.5 * (eps.xx + eps.yy),
            mu,
        })
    }

    pub fn thickness(&self) -> f64 {
        self.x_right - self.x_left
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("layer stack is empty".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if !(l.x_right > l.x_left) {
                return Err(Error::InvalidParameter(format!("layer {k} has non-positive thickness")));
            }
            if k > 0 && layers[k - 1].x_right != l.x_left {
                return Err(Error::InvalidParameter(format!("layers {} and {k} do not abut", k - 1)));
            }
            if l.eps.norm() == 0.0 || l.mu.norm() == 0.0 {
                return Err(Error::InvalidParameter(format!("layer {k} has zero eps or mu")));
            }
        }
        Ok(LayerStack { layers })
    }

    /// One homogeneous layer on `[a, b]`.
    pub fn single(a: f64, b: f64, eps: C64, mu: C64) -> Result<Self> {
        Self::new(vec![Layer {
            x_left: a,
            x_right: b,
            eps,
            mu,
        }])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn a(&self) -> f64 {
        self.layers[0].x_left
    }

    pub fn b(&self) -> f64 {
        self.layers[self.layers.len() - 1].x_right
    }
}

/// Reflected (`a_m`, side `x₁ < a`) and transmitted (`b_m`, side `x₁ > b`)
/// amplitudes in the convention `h_sc = Σ a_m e^{i((m+κ)x₂ − ν_m x₁)}`,
/// `h = Σ b_m e^{i((m+κ)x₂ + ν_m x₁)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeAmplitudes {
    pub modes: Vec<i32>,
    pub a: Vec<C64>,
    pub b: Vec<C64>,
}

impl ModeAmplitudes {
    pub fn zeros(modes: Vec<i32>) -> Self {
        let n = modes.len();
        ModeAmplitudes {
            modes,
            a: vec![C64::new(0.0, 0.0); n],
            b: vec![C64::new(0.0, 0.0); n],
        }
    }

    fn idx(&self, m: i32) -> Option<usize> {
        self.modes.iter().position(|&q| q == m)
    }

    pub fn a_of(&self, m: i32) -> C64 {
        self.idx(m).map_or(C64::new(0.0, 0.0), |i| self.a[i])
    }

    pub fn b_of(&self, m: i32) -> C64 {
        self.idx(m).map_or(C64::new(0.0, 0.0), |i| self.b[i])
    }
}

/// Modes `−M..=M` shifted to contain the incident order.
pub fn mode_window(wave: &WaveParams, m_modes: usize) -> Vec<i32> {
    let c = wave.incident_order;
    let m = m_modes as i32;
    (c - m..=c + m).collect()
}

/// `(T g)_m = −i ν_m ĝ_m`.
pub fn dtn_apply(wave: &WaveParams, modes: &[i32], ghat: &[C64]) -> Vec<C64> {
    modes.iter().zip(ghat).map(|(&m, g)| -I * wave.nu(m) * g).collect()
}

/// Reflected and transmitted power fractions over propagating orders.
pub fn flux_balance(wave: &WaveParams, amps: &ModeAmplitudes) -> (f64, f64) {
    let nu0 = wave.nu_incident();
    let mut r = 0.0;
    let mut t = 0.0;
    for (i, &m) in amps.modes.iter().enumerate() {
        if wave.is_propagating(m) {
            let w = wave.nu(m).re / nu0;
            r += w * amps.a[i].norm_sqr();
            t += w * amps.b[i].norm_sqr();
        }
    }
    (r, t)
}

/// Wavenumber with `Im q ≥ 0` (and `Re q ≥ 0` on the real axis).
pub fn branch_sqrt(q2: C64) -> C64 {
    let q = q2.sqrt();
    if q.im < 0.0 || (q.im == 0.0 && q.re < 0.0) {
        -q
    } else {
        q
    }
}

#[derive(Clone, Copy, Debug)]
struct SMatrix {
    s11: C64,
    s12: C64,
    s21: C64,
    s22: C64,
}

impl SMatrix {
    fn interface(y1: C64, y2: C64) -> Result<Self> {
        let den = y1 + y2;
        if den.norm() < SINGULAR_TOL * (y1.norm() + y2.norm()).max(f64::MIN_POSITIVE) {
            return Err(Error::NearSingular {
                context: "layer interface (surface-wave pole)".into(),
                condition: f64::INFINITY,
            });
        }
        let r = (y1 - y2) / den;
        Ok(SMatrix {
            s11: r,
            s21: 2.0 * y1 / den,
            s12: 2.0 * y2 / den,
            s22: -r,
        })
    }

    fn propagation(q: C64, d: f64) -> Self {
        let p = (I * q * d).exp();
        SMatrix {
            s11: C64::new(0.0, 0.0),
            s12: p,
            s21: p,
            s22: C64::new(0.0, 0.0),
        }
    }

    /// Redheffer star product: `self` followed by `b`.
    fn then(&self, b: &SMatrix) -> Result<Self> {
        let d = C64::new(1.0, 0.0) - self.s22 * b.s11;
        if d.norm() < SINGULAR_TOL {
            return Err(Error::NearSingular {
                context: "scattering-matrix composition".into(),
                condition: 1.0 / d.norm(),
            });
        }
        Ok(SMatrix {
            s11: self.s11 + self.s12 * b.s11 * self.s21 / d,
            s12: self.s12 * b.s12 / d,
            s21: self.s21 * b.s21 / d,
            s22: b.s22 + b.s21 * self.s22 * b.s12 / d,
        })
    }
}

fn layer_q(wave: &WaveParams, l: &Layer, m: i32) -> C64 {
    let k = wave.k_parallel(m);
    branch_sqrt(wave.omega * wave.omega * l.mu * l.eps - k * k)
}

/// Reflection and transmission of Bloch order `m` (which is taken as the
/// incident order).
fn mode_rt(wave: &WaveParams, stack: &LayerStack, m: i32) -> Result<(C64, C64)> {
    let nu = wave.nu(m);
    let y0 = nu / wave.eps0;
    let mut s: Option<SMatrix> = None;
    let mut y_prev = y0;
    for l in stack.layers() {
        let q = layer_q(wave, l, m);
        let y = q / l.eps;
        let step = SMatrix::interface(y_prev, y)?.then(&SMatrix::propagation(q, l.thickness()))?;
        s = Some(match s {
            None => step,
            Some(acc) => acc.then(&step)?,
        });
        y_prev = y;
    }
    let s = s.unwrap().then(&SMatrix::interface(y_prev, y0)?)?;
    let (a, b) = (stack.a(), stack.b());
    Ok((s.s11 * (2.0 * I * nu * a).exp(), s.s21 * (I * nu * (a - b)).exp()))
}

/// Amplitudes for the incident order in the mode window `m̄−M..=m̄+M`. The
/// stack is `x₂`-invariant, so every other order vanishes identically.
pub fn solve_layered(wave: &WaveParams, stack: &LayerStack, m_modes: usize) -> Result<ModeAmplitudes> {
    let modes = mode_window(wave, m_modes);
    let mbar = wave.incident_order;
    let rt: Vec<Result<(C64, C64)>> = modes
        .par_iter()
        .map(|&m| if m == mbar { mode_rt(wave, stack, m) } else { Ok((C64::new(0.0, 0.0), C64::new(0.0, 0.0))) })
        .collect();
    let mut amps = ModeAmplitudes::zeros(modes);
    for (i, r) in rt.into_iter().enumerate() {
        let (a, b) = r?;
        amps.a[i] = a;
        amps.b[i] = b;
    }
    Ok(amps)
}

/// Field of the incident order through the stack, from a global linear
/// system in locally normalized exponentials:
/// `h = A_j e^{iq(x−x_j)} + B_j e^{−iq(x−x_{j+1})}` in layer `j`.
#[derive(Clone, Debug)]
pub struct LayeredField {
    pub wave: WaveParams,
    pub stack: LayerStack,
    q: Vec<C64>,
    coef: Vec<(C64, C64)>,
    /// `a_{m̄}` and `b_{m̄}` recovered from the same system.
    pub a: C64,
    pub b: C64,
}

impl LayeredField {
    pub fn solve(wave: &WaveParams, stack: &LayerStack) -> Result<Self> {
        let m = wave.incident_order;
        let nu = wave.nu(m);
        let y0 = nu / wave.eps0;
        let n = stack.layers().len();
        let q: Vec<C64> = stack.layers().iter().map(|l| layer_q(wave, l, m)).collect();
        let y: Vec<C64> = stack.layers().iter().zip(&q).map(|(l, q)| q / l.eps).collect();
        let d: Vec<C64> = stack.layers().iter().zip(&q).map(|(l, q)| (I * q * l.thickness()).exp()).collect();
        // unknowns: R (reflected at a), (A_j, B_j), T (transmitted at b)
        let dim = 2 * n + 2;
        let z = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        let mut mat = vec![vec![z; dim]; dim];
        let mut rhs = vec![z; dim];
        let inc = (I * nu * stack.a()).exp();
        // left interface: e^{iνa}·inc-normalized + R = A_0 + B_0 d_0
        mat[0][0] = one;
        mat[0][1] = -one;
        mat[0][2] = -d[0];
        rhs[0] = -inc;
        mat[1][0] = -y0;
        mat[1][1] = -y[0];
        mat[1][2] = y[0] * d[0];
        rhs[1] = -y0 * inc;
        for j in 0..n - 1 {
            let r = 2 + 2 * j;
            let (aj, bj, ak, bk) = (1 + 2 * j, 2 + 2 * j, 3 + 2 * j, 4 + 2 * j);
            mat[r][aj] = d[j];
            mat[r][bj] = one;
            mat[r][ak] = -one;
            mat[r][bk] = -d[j + 1];
            mat[r + 1][aj] = y[j] * d[j];
            mat[r + 1][bj] = -y[j];
            mat[r + 1][ak] = -y[j + 1];
            mat[r + 1][bk] = y[j + 1] * d[j + 1];
        }
        let r = 2 * n;
        let (al, bl, t) = (2 * n - 1, 2 * n, 2 * n + 1);
        mat[r][al] = d[n - 1];
        mat[r][bl] = one;
        mat[r][t] = -one;
        mat[r + 1][al] = y[n - 1] * d[n - 1];
        mat[r + 1][bl] = -y[n - 1];
        mat[r + 1][t] = -y0;
        let sol = dense_solve(&mat, &rhs)?;
        let coef = (0..n).map(|j| (sol[1 + 2 * j], sol[2 + 2 * j])).collect();
        Ok(LayeredField {
            wave: *wave,
            stack: stack.clone(),
            q,
            coef,
            a: sol[0] * (I * nu * stack.a()).exp(),
            b: sol[t] * (-I * nu * stack.b()).exp(),
        })
    }

    /// `(h, ∂₁h)` of the `x₁` profile.
    pub fn profile(&self, x1: f64) -> (C64, C64) {
        let nu = self.wave.nu(self.wave.incident_order);
        let (a, b) = (self.stack.a(), self.stack.b());
        if x1 < a {
            let inc = (I * nu * x1).exp();
            let refl = self.a * (-I * nu * x1).exp();
            return (inc + refl, I * nu * (inc - refl));
        }
        if x1 > b {
            let t = self.b * (I * nu * x1).exp();
            return (t, I * nu * t);
        }
        let layers = self.stack.layers();
        let j = layers.iter().position(|l| x1 <= l.x_right).unwrap_or(layers.len() - 1);
        let l = &layers[j];
        let q = self.q[j];
        let (aj, bj) = self.coef[j];
        let e1 = (I * q * (x1 - l.x_left)).exp();
        let e2 = (-I * q * (x1 - l.x_right)).exp();
        (aj * e1 + bj * e2, I * q * (aj * e1 - bj * e2))
    }

    pub fn h_at(&self, x: [f64; 2]) -> C64 {
        self.profile(x[0]).0 * (I * self.wave.k_parallel(self.wave.incident_order) * x[1]).exp()
    }

    /// Permittivity at `x₁` (layer value or the exterior `ε₀`).
    pub fn eps_at(&self, x1: f64) -> C64 {
        self.stack
            .layers()
            .iter()
            .find(|l| x1 >= l.x_left && x1 <= l.x_right)
            .map_or(C64::new(self.wave.eps0, 0.0), |l| l.eps)
    }

    /// `E = (iωε)⁻¹ ∇⊥h`.
    pub fn e_at(&self, x: [f64; 2]) -> [C64; 2] {
        let k = self.wave.k_parallel(self.wave.incident_order);
        let ph = (I * k * x[1]).exp();
        let (h, dh) = self.profile(x[0]);
        let c = (I * self.wave.omega * self.eps_at(x[0])).inv();
        [-(I * k * h * ph) * c, dh * ph * c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn airy(wave: &WaveParams, d: f64, eps: C64, mu: C64) -> (C64, C64) {
        let nu = wave.nu_incident();
        let q = branch_sqrt(wave.omega * wave.omega * eps * mu);
        let r = (nu / wave.eps0 - q / eps) / (nu / wave.eps0 + q / eps);
        let p = (2.0 * I * q * d).exp();
        let rr = r * (1.0 - p) / (1.0 - r * r * p);
        let tt = (1.0 - r * r) * (I * q * d).exp() / (1.0 - r * r * p);
        (rr, tt * (-I * nu * d).exp())
    }

    #[test]
    fn transparent_stack() {
        let w = WaveParams::new(0.8, 0.1, 0, 1.0, 1.0).unwrap();
        let s = LayerStack::single(0.0, 2.0, C64::new(1.0, 0.0), C64::new(1.0, 0.0)).unwrap();
        let amps = solve_layered(&w, &s, 3).unwrap();
        assert!(amps.a_of(0).norm() < 1e-15);
        assert!((amps.b_of(0) - 1.0).norm() < 1e-14);
        assert_eq!(flux_balance(&w, &amps).0, amps.a_of(0).norm_sqr());
    }

    #[test]
    fn matches_airy_formula() {
        let w = WaveParams::normal(0.8).unwrap();
        let eps = C64::new(1.79, 0.0);
        let mu = C64::new(0.8, 0.13);
        let s = LayerStack::single(0.0, PI, eps, mu).unwrap();
        let amps = solve_layered(&w, &s, 2).unwrap();
        let (r, t) = airy(&w, PI, eps, mu);
        assert!((amps.a_of(0) - r).norm() < 1e-12);
        assert!((amps.b_of(0) - t).norm() < 1e-12);
        let (rf, tf) = flux_balance(&w, &amps);
        assert!(rf + tf < 1.0);
    }

    #[test]
    fn field_system_agrees_with_smatrix() {
        let w = WaveParams::new(1.1, -0.2, 0, 1.0, 1.0).unwrap();
        let layers = vec![
            Layer { x_left: 0.5, x_right: 1.0, eps: C64::new(2.0, 0.1), mu: C64::new(1.0, 0.0) },
            Layer { x_left: 1.0, x_right: 2.2, eps: C64::new(1.2, 0.0), mu: C64::new(0.7, 0.3) },
            Layer { x_left: 2.2, x_right: 2.5, eps: C64::new(4.0, 0.0), mu: C64::new(1.0, 0.0) },
        ];
        let s = LayerStack::new(layers).unwrap();
        let amps = solve_layered(&w, &s, 1).unwrap();
        let f = LayeredField::solve(&w, &s).unwrap();
        assert!((f.a - amps.a_of(0)).norm() < 1e-12);
        assert!((f.b - amps.b_of(0)).norm() < 1e-12);
        // continuity of h and ε⁻¹∂₁h across interfaces
        for x in [0.5, 1.0, 2.2, 2.5] {
            let (hl, dl) = f.profile(x - 1e-9);
            let (hr, dr) = f.profile(x + 1e-9);
            assert!((hl - hr).norm() < 1e-7);
            assert!((dl / f.eps_at(x - 1e-9) - dr / f.eps_at(x + 1e-9)).norm() < 1e-7);
        }
    }

    #[test]
    fn split_layer_and_reciprocity() {
        let w = WaveParams::normal(0.9).unwrap();
        let (eps, mu) = (C64::new(1.5, 0.2), C64::new(0.9, 0.1));
        let one = LayerStack::single(0.0, 2.0, eps, mu).unwrap();
        let two = LayerStack::new(vec![
            Layer { x_left: 0.0, x_right: 1.0, eps, mu },
            Layer { x_left: 1.0, x_right: 2.0, eps, mu },
        ])
        .unwrap();
        let a1 = solve_layered(&w, &one, 0).unwrap();
        let a2 = solve_layered(&w, &two, 0).unwrap();
        assert!((a1.a[0] - a2.a[0]).norm() < 1e-13 && (a1.b[0] - a2.b[0]).norm() < 1e-13);
    }

    #[test]
    fn decoupled_orders_vanish_and_anisotropy_rejected() {
        let w = WaveParams::normal(0.8).unwrap();
        let s = LayerStack::single(0.0, 1.0, C64::new(2.0, 0.0), C64::new(1.0, 0.0)).unwrap();
        let amps = solve_layered(&w, &s, 4).unwrap();
        for (i, &m) in amps.modes.iter().enumerate() {
            if m != 0 {
                assert_eq!(amps.a[i], C64::new(0.0, 0.0));
                assert_eq!(amps.b[i], C64::new(0.0, 0.0));
            }
        }
        let an = SymTensor2 { xx: C64::new(2.0, 0.0), xy: C64::new(0.1, 0.0), yy: C64::new(2.0, 0.0) };
        assert!(matches!(Layer::from_tensor(0.0, 1.0, an, C64::new(1.0, 0.0)), Err(Error::Anisotropic(_))));
    }

    #[test]
    fn dtn_examples() {
        let w = WaveParams::new(1.5, 0.0, 0, 1.0, 1.0).unwrap();
        let t = dtn_apply(&w, &[0, 2], &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        assert!((t[0] - C64::new(0.0, -1.5)).norm() < 1e-15);
        assert_eq!(t[1], C64::new(0.0, 0.0));
    }
}
