//! Second-order finite-difference model of `H = -d^2/dx^2 + V` on a truncated
//! interval, used as an independent reference for resolvents, eigenvalues and
//! spectral projections.
//!
//! The left end carries `sin(alpha) u' + cos(alpha) u = 0` through a ghost
//! point; the right end is a hard Dirichlet cap. The boundary row is scaled by
//! 1/2 so the discrete operator is Hermitian with respect to the trapezoid
//! inner product, and everything internal works with the symmetric form
//! `D = W^{1/2} A W^{-1/2}` in the eigenbasis of `alpha`.

use num_complex::Complex64;

use crate::error::{Result, SpectralError};
use crate::ivp::PotentialSpec;
use crate::matfun::{c, eig_of_hermitian, BoundaryCondition, CMat, CVec};

/// Channels whose `sin(alpha)` eigenvalue is below this are treated as Dirichlet.
const DIRICHLET_SIN: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct DiscretizedOperator {
    pub dim: usize,
    pub h: f64,
    /// Nodes carrying unknowns; the capped right end is excluded.
    pub grid: Vec<f64>,
    diag: Vec<CMat>,
    /// `off[k]` couples node `k` to node `k + 1`.
    off: Vec<CMat>,
    /// Square roots of the quadrature weights at node 0 per rotated channel
    /// (zero for Dirichlet channels, whose unknown is decoupled).
    sqrt_w0: Vec<f64>,
    rotation: CMat,
    penalty: f64,
}

/// One eigenvalue with an orthonormal basis of its eigenspace.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    /// Grid functions normalized in the discrete `L^2` inner product.
    pub vector: Vec<CVec>,
}

fn dot(a: &[CVec], b: &[CVec]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.dotc(y)).sum()
}

fn norm(a: &[CVec]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

/// Negative pivots of an unpivoted `LDL^*` of a Hermitian block; by Sylvester
/// this is the number of negative eigenvalues unless a pivot vanishes.
fn negative_pivots(m: &CMat) -> usize {
    let n = m.nrows();
    if n == 1 {
        return usize::from(m[(0, 0)].re < 0.0);
    }
    let mut a = m.clone();
    let mut neg = 0;
    for k in 0..n {
        let mut p = a[(k, k)].re;
        if p == 0.0 {
            p = f64::MIN_POSITIVE;
        }
        if p < 0.0 {
            neg += 1;
        }
        for i in k + 1..n {
            let l = a[(i, k)] / p;
            for j in k + 1..n {
                let akj = a[(k, j)];
                a[(i, j)] -= l * akj;
            }
        }
    }
    neg
}

fn invert(m: &CMat) -> Result<CMat> {
    if m.nrows() == 1 {
        let p = m[(0, 0)];
        if p.norm() == 0.0 {
            return Err(SpectralError::SingularShift);
        }
        return Ok(CMat::from_element(1, 1, p.inv()));
    }
    m.clone().lu().try_inverse().ok_or(SpectralError::SingularShift)
}

/// Discretizes `H` on `[lo, hi]` with step about `h`, `bc` at `lo` and a
/// Dirichlet cap at `hi`.
pub fn discretize(v: &PotentialSpec, domain: (f64, f64), bc: &BoundaryCondition, h: f64) -> Result<DiscretizedOperator> {
    let (lo, hi) = domain;
    if !(h > 0.0) || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(SpectralError::InvalidInput("need h > 0 and a finite interval".into()));
    }
    let n = v.dim();
    if bc.dim() != n {
        return Err(SpectralError::DimensionMismatch {
            expected: n,
            found: bc.dim(),
        });
    }
    let k_total = ((hi - lo) / h).round().max(2.0) as usize;
    let h = (hi - lo) / k_total as f64;
    let grid: Vec<f64> = (0..k_total).map(|k| lo + k as f64 * h).collect();

    let e = eig_of_hermitian(bc.alpha.as_matrix());
    let u = e.vectors.clone();
    let ut = u.adjoint();
    let inv_h2 = 1.0 / (h * h);
    let penalty = 1e3 * (4.0 * inv_h2 + v.norm_bound() + 1.0);

    let robin: Vec<Option<f64>> = e
        .values
        .iter()
        .map(|&a| if a.sin().abs() < DIRICHLET_SIN { None } else { Some(a.cos() / a.sin()) })
        .collect();
    let sqrt_w0: Vec<f64> = robin.iter().map(|r| if r.is_some() { 0.5f64.sqrt() } else { 0.0 }).collect();

    let rotate = |m: CMat| &ut * m * &u;
    let mut diag = Vec::with_capacity(k_total);
    let mut off = Vec::with_capacity(k_total.saturating_sub(1));
    for (k, &x) in grid.iter().enumerate() {
        let vk = if k == 0 {
            rotate(v.value_in_segment(x, lo, hi))
        } else {
            rotate(v.value_averaged(x))
        };
        let mut d = vk + CMat::identity(n, n) * c(2.0 * inv_h2, 0.0);
        if k == 0 {
            for (j, r) in robin.iter().enumerate() {
                match r {
                    Some(cot) => d[(j, j)] -= c(2.0 * cot / h, 0.0),
                    None => {
                        for l in 0..n {
                            d[(j, l)] = c(0.0, 0.0);
                            d[(l, j)] = c(0.0, 0.0);
                        }
                        d[(j, j)] = c(penalty, 0.0);
                    }
                }
            }
        }
        diag.push(d);
        if k + 1 < k_total {
            let mut o = CMat::identity(n, n) * c(-inv_h2, 0.0);
            if k == 0 {
                for j in 0..n {
                    o[(j, j)] = if robin[j].is_some() { c(-2f64.sqrt() * inv_h2, 0.0) } else { c(0.0, 0.0) };
                }
            }
            off.push(o);
        }
    }
    Ok(DiscretizedOperator {
        dim: n,
        h,
        grid,
        diag,
        off,
        sqrt_w0,
        rotation: u,
        penalty,
    })
}

impl DiscretizedOperator {
    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    fn check(&self, u: &[CVec]) -> Result<()> {
        if u.len() != self.nodes() {
            return Err(SpectralError::GridMismatch);
        }
        if let Some(bad) = u.iter().find(|x| x.len() != self.dim) {
            return Err(SpectralError::DimensionMismatch {
                expected: self.dim,
                found: bad.len(),
            });
        }
        Ok(())
    }

    /// Grid function to symmetric-form coordinates: `W^{1/2} U^* u`.
    fn to_sym(&self, u: &[CVec]) -> Vec<CVec> {
        let ut = self.rotation.adjoint();
        u.iter()
            .enumerate()
            .map(|(k, x)| {
                let mut y = &ut * x;
                if k == 0 {
                    for j in 0..self.dim {
                        y[j] *= self.sqrt_w0[j];
                    }
                }
                y
            })
            .collect()
    }

    fn unsym(&self, w: &[CVec]) -> Vec<CVec> {
        w.iter()
            .enumerate()
            .map(|(k, y)| {
                let mut y = y.clone();
                if k == 0 {
                    for j in 0..self.dim {
                        y[j] = if self.sqrt_w0[j] > 0.0 { y[j] / self.sqrt_w0[j] } else { c(0.0, 0.0) };
                    }
                }
                &self.rotation * y
            })
            .collect()
    }

    fn sym_apply(&self, w: &[CVec]) -> Vec<CVec> {
        let k_total = self.nodes();
        (0..k_total)
            .map(|k| {
                let mut y = &self.diag[k] * &w[k];
                if k > 0 {
                    y += self.off[k - 1].adjoint() * &w[k - 1];
                }
                if k + 1 < k_total {
                    y += &self.off[k] * &w[k + 1];
                }
                y
            })
            .collect()
    }

    /// Block LU solve of `(D - shift) w = b`.
    fn sym_solve(&self, shift: Complex64, b: &[CVec]) -> Result<Vec<CVec>> {
        let k_total = self.nodes();
        let n = self.dim;
        let id = CMat::identity(n, n);
        let mut ginv: Vec<CMat> = Vec::with_capacity(k_total);
        let mut y: Vec<CVec> = Vec::with_capacity(k_total);
        for k in 0..k_total {
            let mut g = &self.diag[k] - &id * shift;
            let mut rhs = b[k].clone();
            if k > 0 {
                let lower = self.off[k - 1].adjoint();
                let l = &lower * &ginv[k - 1];
                g -= &l * &self.off[k - 1];
                rhs -= &l * &y[k - 1];
            }
            ginv.push(invert(&g)?);
            y.push(rhs);
        }
        let mut x = vec![CVec::zeros(n); k_total];
        for k in (0..k_total).rev() {
            let mut r = y[k].clone();
            if k + 1 < k_total {
                r -= &self.off[k] * &x[k + 1];
            }
            x[k] = &ginv[k] * r;
        }
        Ok(x)
    }

    /// Number of eigenvalues below `sigma`.
    pub fn count_below(&self, sigma: f64) -> usize {
        let k_total = self.nodes();
        let n = self.dim;
        let id = CMat::identity(n, n);
        let mut neg = 0;
        let mut prev: Option<CMat> = None;
        for k in 0..k_total {
            let mut g = &self.diag[k] - &id * c(sigma, 0.0);
            if let Some(pinv) = &prev {
                let o = &self.off[k - 1];
                g -= o.adjoint() * pinv * o;
            }
            neg += negative_pivots(&g);
            let g = crate::matfun::hermitian_part(&g);
            prev = Some(invert(&g).unwrap_or_else(|_| {
                let mut p = g.clone();
                for j in 0..n {
                    p[(j, j)] += c(1e-300f64.max(f64::EPSILON * g.norm()), 0.0);
                }
                invert(&p).unwrap_or_else(|_| CMat::zeros(n, n))
            }));
        }
        neg
    }

    fn gershgorin(&self) -> (f64, f64) {
        let k_total = self.nodes();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..k_total {
            for i in 0..self.dim {
                let mut r = 0.0;
                for j in 0..self.dim {
                    if j != i {
                        r += self.diag[k][(i, j)].norm();
                    }
                    if k > 0 {
                        r += self.off[k - 1][(j, i)].norm();
                    }
                    if k + 1 < k_total {
                        r += self.off[k][(i, j)].norm();
                    }
                }
                let d = self.diag[k][(i, i)].re;
                lo = lo.min(d - r);
                hi = hi.max(d + r);
            }
        }
        (lo, hi)
    }

    /// Eigenvalues in `(l1, l2]` by Sturm bisection, ascending, with multiplicity.
    pub fn eigenvalues_in(&self, l1: f64, l2: f64) -> Vec<f64> {
        let (glo, ghi) = self.gershgorin();
        let a = l1.max(glo - 1.0);
        let b = l2.min(ghi + 1.0);
        if !(b > a) {
            return Vec::new();
        }
        let ca = self.count_below(a);
        let cb = self.count_below(b);
        let mut out = Vec::with_capacity(cb.saturating_sub(ca));
        for idx in ca..cb {
            // eigenvalue number idx: smallest sigma with count_below(sigma) > idx
            let (mut lo, mut hi) = (a, b);
            let scale = a.abs().max(b.abs()).max(1.0);
            while hi - lo > 4.0 * f64::EPSILON * scale {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if self.count_below(mid) > idx {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        out
    }

    /// Eigenvalues in `(l1, l2]` with orthonormal eigenvectors, by inverse
    /// iteration; nearly equal eigenvalues share one orthonormalized subspace.
    pub fn eigenpairs_in(&self, l1: f64, l2: f64) -> Result<Vec<EigenPair>> {
        let values = self.eigenvalues_in(l1, l2);
        let n = self.dim;
        let k_total = self.nodes();
        let mut found: Vec<(f64, Vec<CVec>)> = Vec::new();
        for (i, &lambda) in values.iter().enumerate() {
            let scale = lambda.abs().max(1.0);
            let shift = c(lambda + 1e-9 * scale, 0.0);
            // deterministic, generic start vector
            let mut w: Vec<CVec> = (0..k_total)
                .map(|k| CVec::from_fn(n, |j, _| c(((k * 31 + j * 17 + i * 7) as f64 * 0.618_033_988_749_895).fract() - 0.5, 0.0)))
                .collect();
            let cluster: Vec<usize> = (0..found.len())
                .filter(|&p| (found[p].0 - lambda).abs() <= 1e-7 * scale)
                .collect();
            for _ in 0..4 {
                for &p in &cluster {
                    let q = &found[p].1;
                    let a = dot(q, &w);
                    for (wk, qk) in w.iter_mut().zip(q) {
                        *wk -= qk * a;
                    }
                }
                let nr = norm(&w);
                for wk in w.iter_mut() {
                    *wk /= c(nr, 0.0);
                }
                w = self.sym_solve(shift, &w)?;
            }
            for &p in &cluster {
                let q = &found[p].1;
                let a = dot(q, &w);
                for (wk, qk) in w.iter_mut().zip(q) {
                    *wk -= qk * a;
                }
            }
            let nr = norm(&w);
            for wk in w.iter_mut() {
                *wk /= c(nr, 0.0);
            }
            found.push((lambda, w));
        }
        let s = 1.0 / self.h.sqrt();
        Ok(found
            .into_iter()
            .map(|(value, w)| {
                let mut vector = self.unsym(&w);
                for x in vector.iter_mut() {
                    *x *= c(s, 0.0);
                }
                EigenPair { value, vector }
            })
            .collect())
    }

    /// Discrete `L^2` inner product (trapezoid weights, antilinear in `u`).
    pub fn inner(&self, u: &[CVec], v: &[CVec]) -> Complex64 {
        dot(&self.to_sym(u), &self.to_sym(v)) * self.h
    }

    pub fn l2_norm(&self, u: &[CVec]) -> f64 {
        self.inner(u, u).re.max(0.0).sqrt()
    }

    /// `H u`.
    pub fn apply(&self, u: &[CVec]) -> Result<Vec<CVec>> {
        self.check(u)?;
        Ok(self.unsym(&self.sym_apply(&self.to_sym(u))))
    }

    /// `(H - z)^{-1} u`.
    pub fn resolvent(&self, z: Complex64, u: &[CVec]) -> Result<Vec<CVec>> {
        self.check(u)?;
        if z.im == 0.0 {
            return Err(SpectralError::SingularShift);
        }
        Ok(self.unsym(&self.sym_solve(z, &self.to_sym(u))?))
    }

    /// `E_H((l1, l2]) u` from the eigenpairs.
    pub fn projection_apply(&self, pairs: &[EigenPair], l1: f64, l2: f64, u: &[CVec]) -> Result<Vec<CVec>> {
        self.check(u)?;
        let mut out = vec![CVec::zeros(self.dim); self.nodes()];
        for p in pairs.iter().filter(|p| p.value > l1 && p.value <= l2) {
            let a = self.inner(&p.vector, u);
            for (o, e) in out.iter_mut().zip(&p.vector) {
                *o += e * a;
            }
        }
        Ok(out)
    }

    /// Eigenvalues above this are artifacts of decoupled Dirichlet unknowns.
    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    /// Dense symmetric form; only sensible for small grids.
    pub fn to_dense(&self) -> CMat {
        let n = self.dim;
        let k_total = self.nodes();
        let mut m = CMat::zeros(n * k_total, n * k_total);
        for k in 0..k_total {
            m.view_mut((k * n, k * n), (n, n)).copy_from(&self.diag[k]);
            if k + 1 < k_total {
                m.view_mut((k * n, (k + 1) * n), (n, n)).copy_from(&self.off[k]);
                m.view_mut(((k + 1) * n, k * n), (n, n)).copy_from(&self.off[k].adjoint());
            }
        }
        m
    }

    /// `cos(alpha) u'(a) - sin(alpha) u(a)` for a grid function vanishing
    /// smoothly at the boundary as required by the boundary condition;
    /// one-sided second-order difference.
    pub fn boundary_coefficient(&self, bc: &BoundaryCondition, u: &[CVec]) -> CVec {
        let d = (u[1].clone() * c(4.0, 0.0) - &u[2] - u[0].clone() * c(3.0, 0.0)) / c(2.0 * self.h, 0.0);
        bc.cos() * d - bc.sin() * &u[0]
    }
}

/// Samples `f` on the operator's grid.
pub fn sample<F: Fn(f64) -> CVec>(op: &DiscretizedOperator, f: F) -> Vec<CVec> {
    op.grid.iter().map(|&x| f(x)).collect()
}

/// Relative discrete `L^2` distance `||a - b|| / ||b||`, plain grid weights.
pub fn relative_l2(a: &[CVec], b: &[CVec]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
    let den: f64 = b.iter().map(|y| y.norm_squared()).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}
