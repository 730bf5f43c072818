//! Complex sparse matrices and linear solves.
//!
//! Matrices are assembled from triplets into CSR with duplicates summed in
//! insertion order, so assembly is bitwise reproducible whenever the
//! triplet order is. Factorization uses faer's sparse LU; a BiCGSTAB
//! iteration with Jacobi preconditioning serves as fallback.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};
use crate::model::C64;

/// Condition estimates above this are reported as near-singular.
pub const COND_LIMIT: f64 = 1e14;

#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        TripletBuilder {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: C64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, v));
    }

    pub fn extend(&mut self, other: TripletBuilder) {
        self.entries.extend(other.entries);
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col = Vec::with_capacity(self.entries.len());
        let mut val: Vec<C64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(j);
                val.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            col,
            val,
        }
    }
}

/// Square complex matrix in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<C64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col[r.clone()].binary_search(&j) {
            Ok(k) => self.val[r.start + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        (0..self.n)
            .map(|i| {
                let mut s = C64::new(0.0, 0.0);
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.val[k] * x[self.col[k]];
                }
                s
            })
            .collect()
    }

    /// `yᴴ A x`.
    pub fn form(&self, y: &[C64], x: &[C64]) -> C64 {
        self.matvec(x).iter().zip(y).map(|(ax, yi)| yi.conj() * ax).sum()
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut s = vec![0.0; self.n];
        for (c, v) in self.col.iter().zip(&self.val) {
            s[*c] += v.norm();
        }
        s.into_iter().fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let scale = self.val.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        (0..self.n).all(|i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).all(|k| (self.val[k] - self.get(self.col[k], i)).norm() <= tol * scale)
        })
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, C64>> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                t.push(Triplet::new(i, self.col[k], self.val[k]));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &t).map_err(|e| Error::Solver(format!("sparse matrix construction: {e:?}")))
    }
}

pub fn norm2(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// `‖Ax − b‖ / ‖b‖` (absolute when `b = 0`).
pub fn relative_residual(a: &CsrMatrix, x: &[C64], b: &[C64]) -> f64 {
    let r: Vec<C64> = a.matvec(x).iter().zip(b).map(|(ax, bi)| ax - bi).collect();
    let nb = norm2(b);
    if nb > 0.0 {
        norm2(&r) / nb
    } else {
        norm2(&r)
    }
}

/// Reusable sparse LU factorization.
pub struct LuSolver {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, C64>,
}

impl LuSolver {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let m = a.to_faer()?;
        let lu = m.sp_lu().map_err(|e| Error::Solver(format!("sparse LU failed: {e:?}")))?;
        Ok(LuSolver { n: a.n, lu })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let rhs = Mat::<C64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    /// Solve with several right-hand sides at once.
    pub fn solve_many(&self, bs: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let rhs = Mat::<C64>::from_fn(self.n, bs.len(), |i, j| bs[j][i]);
        let x = self.lu.solve(&rhs);
        (0..bs.len()).map(|j| (0..self.n).map(|i| x[(i, j)]).collect()).collect()
    }

    pub fn solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        let rhs = Mat::<C64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve_adjoint(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    /// Hager–Higham estimate of `‖A‖₁‖A⁻¹‖₁`.
    pub fn condition_estimate(&self, a: &CsrMatrix) -> f64 {
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let mut x = vec![C64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0;
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let y = self.solve(&x);
            if y.iter().any(|v| !v.is_finite()) {
                return f64::INFINITY;
            }
            let new_est: f64 = y.iter().map(|v| v.norm()).sum();
            if new_est <= est && last_j != usize::MAX {
                break;
            }
            est = new_est;
            let xi: Vec<C64> = y.iter().map(|v| if v.norm() > 0.0 { v / v.norm() } else { C64::new(1.0, 0.0) }).collect();
            let z = self.solve_adjoint(&xi);
            let (j, zmax) = z.iter().enumerate().map(|(j, v)| (j, v.norm())).fold((0, -1.0), |acc, p| if p.1 > acc.1 { p } else { acc });
            let ztx = dot(&z, &x).re;
            if zmax <= ztx || j == last_j {
                break;
            }
            last_j = j;
            x = vec![C64::new(0.0, 0.0); n];
            x[j] = C64::new(1.0, 0.0);
        }
        a.norm1() * est
    }
}

/// BiCGSTAB with Jacobi preconditioning. Returns the iterate and the
/// number of iterations, or an error if `tol` is not reached.
pub fn bicgstab(a: &CsrMatrix, b: &[C64], tol: f64, max_iter: usize) -> Result<(Vec<C64>, usize)> {
    let n = a.n;
    let dinv: Vec<C64> = a.diagonal().into_iter().map(|d| if d.norm() > 0.0 { d.inv() } else { C64::new(1.0, 0.0) }).collect();
    let prec = |v: &[C64]| -> Vec<C64> { v.iter().zip(&dinv).map(|(x, d)| x * d).collect() };
    let bn = norm2(b);
    if bn == 0.0 {
        return Ok((vec![C64::new(0.0, 0.0); n], 0));
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0));
    let mut v = vec![C64::new(0.0, 0.0); n];
    let mut p = vec![C64::new(0.0, 0.0); n];
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.norm() == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = prec(&p);
        v = a.matvec(&ph);
        alpha = rho / dot(&r0, &v);
        let s: Vec<C64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm2(&s) / bn < tol {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok((x, it));
        }
        let sh = prec(&s);
        let t = a.matvec(&sh);
        let tt = dot(&t, &t);
        omega = if tt.norm() > 0.0 { dot(&t, &s) / tt } else { C64::new(0.0, 0.0) };
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) / bn < tol {
            return Ok((x, it));
        }
        if omega.norm() == 0.0 {
            break;
        }
    }
    Err(Error::Solver(format!("BiCGSTAB did not reach relative residual {tol:e} in {max_iter} iterations")))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolveMethod {
    DirectLu,
    BiCgStab,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub method: SolveMethod,
    pub residual: f64,
    pub condition: f64,
    pub nnz: usize,
}

/// Factorize `a`, check conditioning and solve for every right-hand side.
/// Falls back to BiCGSTAB if the factorization fails or leaves a residual
/// above `tol`.
pub fn solve_checked(a: &CsrMatrix, rhs: &[Vec<C64>], tol: f64, context: &str) -> Result<(Vec<Vec<C64>>, SolveStats)> {
    let direct = LuSolver::new(a).and_then(|lu| {
        let cond = lu.condition_estimate(a);
        if !(cond < COND_LIMIT) {
            return Err(Error::NearSingular {
                context: context.to_string(),
                condition: cond,
            });
        }
        let xs = lu.solve_many(rhs);
        let res = xs.iter().zip(rhs).map(|(x, b)| relative_residual(a, x, b)).fold(0.0, f64::max);
        Ok((xs, res, cond))
    });
    match direct {
        Ok((xs, res, cond)) if res <= tol => Ok((
            xs,
            SolveStats {
                method: SolveMethod::DirectLu,
                residual: res,
                condition: cond,
                nnz: a.nnz(),
            },
        )),
        Err(e @ Error::NearSingular { .. }) => Err(e),
        other => {
            let cond = other.as_ref().map(|t| t.2).unwrap_or(f64::NAN);
            log::warn!("{context}: direct solve unusable, falling back to BiCGSTAB");
            let mut xs = Vec::with_capacity(rhs.len());
            let mut res = 0.0f64;
            for b in rhs {
                let (x, _) = bicgstab(a, b, tol * 0.5, 20 * a.n.max(100))?;
                res = res.max(relative_residual(a, &x, b));
                xs.push(x);
            }
            Ok((
                xs,
                SolveStats {
                    method: SolveMethod::BiCgStab,
                    residual: res,
                    condition: cond,
                    nnz: a.nnz(),
                },
            ))
        }
    }
}

/// Dense LU solve of a small general system.
pub fn dense_solve(a: &[Vec<C64>], b: &[C64]) -> Result<Vec<C64>> {
    let n = b.len();
    let m = Mat::<C64>::from_fn(n, n, |i, j| a[i][j]);
    let rhs = Mat::<C64>::from_fn(n, 1, |i, _| b[i]);
    let x = m.partial_piv_lu().solve(&rhs);
    let out: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NearSingular {
            context: "dense solve".into(),
            condition: f64::INFINITY,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn laplace_like(n: usize) -> CsrMatrix {
        let mut t = TripletBuilder::new(n);
        for i in 0..n {
            t.push(i, i, c(2.5, 0.1));
            if i + 1 < n {
                t.push(i, i + 1, c(-1.0, 0.0));
                t.push(i + 1, i, c(-1.0, 0.2));
            }
        }
        t.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut t = TripletBuilder::new(2);
        t.push(0, 0, c(1.0, 0.0));
        t.push(0, 0, c(2.0, 1.0));
        t.push(1, 1, c(1.0, 0.0));
        let a = t.build();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 0), c(3.0, 1.0));
        assert_eq!(a.get(0, 1), c(0.0, 0.0));
    }

    #[test]
    fn lu_and_bicgstab_agree() {
        let a = laplace_like(200);
        let b: Vec<C64> = (0..200).map(|i| c((i as f64).sin(), 0.3)).collect();
        let lu = LuSolver::new(&a).unwrap();
        let x = lu.solve(&b);
        assert!(relative_residual(&a, &x, &b) < 1e-13);
        let (y, _) = bicgstab(&a, &b, 1e-12, 2000).unwrap();
        let d: Vec<C64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
        assert!(norm2(&d) / norm2(&x) < 1e-9);
        let z = lu.solve_adjoint(&b);
        // check Aᴴ z = b through yᴴ A z
        let e0: Vec<C64> = (0..200).map(|i| if i == 7 { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect();
        let az = a.form(&z, &e0).conj();
        assert!((az - b[7]).norm() < 1e-12);
    }

    #[test]
    fn condition_estimate_of_diagonal() {
        let mut t = TripletBuilder::new(4);
        for (i, d) in [1.0, 10.0, 0.5, 100.0].iter().enumerate() {
            t.push(i, i, c(*d, 0.0));
        }
        let a = t.build();
        let k = LuSolver::new(&a).unwrap().condition_estimate(&a);
        assert!((k - 200.0).abs() < 1e-9, "{k}");
    }

    #[test]
    fn singular_system_is_reported() {
        let mut t = TripletBuilder::new(3);
        t.push(0, 0, c(1.0, 0.0));
        t.push(0, 1, c(1.0, 0.0));
        t.push(1, 0, c(1.0, 0.0));
        t.push(1, 1, c(1.0, 0.0));
        t.push(2, 2, c(1.0, 0.0));
        let a = t.build();
        let r = solve_checked(&a, &[vec![c(1.0, 0.0); 3]], 1e-10, "test");
        assert!(r.is_err());
    }

    #[test]
    fn dense_solve_small() {
        let a = vec![vec![c(2.0, 0.0), c(1.0, 1.0)], vec![c(0.0, 1.0), c(3.0, 0.0)]];
        let b = vec![c(1.0, 0.0), c(0.0, 2.0)];
        let x = dense_solve(&a, &b).unwrap();
        for i in 0..2 {
            let r = a[i][0] * x[0] + a[i][1] * x[1] - b[i];
            assert!(r.norm() < 1e-14);
        }
    }
}
