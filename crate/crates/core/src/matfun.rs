//! Hermitian matrices, their functional calculus, and the small linear-algebra
//! kit shared by the rest of the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::config::Tolerances;
use crate::error::{Result, SpectralError};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// An n x n complex Hermitian matrix.
///
/// Construction symmetrizes `(m + m^*) / 2` when the asymmetry is within the
/// Hermiticity tolerance and fails otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMat);

impl HermitianMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        Self::with_tolerance(m, Tolerances::default().herm)
    }

    pub fn with_tolerance(m: CMat, tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(SpectralError::InvalidInput(format!(
                "Hermitian matrix must be square and nonempty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SpectralError::InvalidInput("matrix has non-finite entries".into()));
        }
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let asym = asymmetry(&m);
        if asym > tol * scale.max(f64::MIN_POSITIVE) && asym > 0.0 {
            return Err(SpectralError::NonHermitian {
                asymmetry: asym / scale,
                tolerance: tol,
            });
        }
        Ok(Self(hermitian_part(&m)))
    }

    pub fn from_real(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = CMat::from_fn(n, n, |i, j| c(rows[i].get(j).copied().unwrap_or(f64::NAN), 0.0));
        Self::new(m)
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self(CMat::from_fn(n, n, |i, j| if i == j { c(d[i], 0.0) } else { Complex64::default() }))
    }

    pub fn identity(n: usize) -> Self {
        Self(CMat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMat::zeros(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self(CMat::identity(n, n) * c(s, 0.0))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }
}

/// Largest entry of `|m - m^*|`.
pub fn asymmetry(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(m + m^*) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// `(m - m^*) / 2i`, the matrix imaginary part.
pub fn imag_part(m: &CMat) -> CMat {
    (m - m.adjoint()) * c(0.0, -0.5)
}

/// Eigen-decomposition `m = U diag(values) U^*` with ascending eigenvalues.
///
/// Eigenvector phases are fixed so the largest-magnitude component of every
/// column is real and positive.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl Eigen {
    pub fn reconstruct(&self) -> CMat {
        self.apply(|x| c(x, 0.0))
    }

    /// `U diag(f(values)) U^*`.
    pub fn apply<F: Fn(f64) -> Complex64>(&self, f: F) -> CMat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        scaled * self.vectors.adjoint()
    }

    /// `U diag(f(j)) U^*` where `f` receives the eigenvalue index.
    pub fn apply_complex<F: Fn(usize) -> Complex64>(&self, f: F) -> CMat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(j);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

pub fn hermitian_eig(m: &HermitianMatrix) -> Eigen {
    eig_of_hermitian(m.as_matrix())
}

/// Eigen-decomposition of a matrix already known to be Hermitian; only the
/// Hermitian part is used.
pub fn eig_of_hermitian(m: &CMat) -> Eigen {
    let n = m.nrows();
    if n == 1 {
        return Eigen {
            values: vec![m[(0, 0)].re],
            vectors: CMat::identity(1, 1),
        };
    }
    let se = SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&k| se.eigenvalues[k]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = se.eigenvectors.column(src);
        let mut pivot = 0;
        let mut best = -1.0;
        for i in 0..n {
            let a = col[i].norm();
            if a > best * (1.0 + 1e-12) {
                best = a;
                pivot = i;
            }
        }
        let p = col[pivot];
        let phase = if p.norm() > 0.0 { p.conj() / p.norm() } else { c(1.0, 0.0) };
        let nrm = col.norm();
        for i in 0..n {
            vectors[(i, dst)] = col[i] * phase / nrm;
        }
    }
    Eigen { values, vectors }
}

/// Real scalar function of a Hermitian matrix via the spectral theorem.
pub fn matrix_fn<F: Fn(f64) -> f64>(m: &HermitianMatrix, f: F) -> HermitianMatrix {
    let e = hermitian_eig(m);
    HermitianMatrix(hermitian_part(&e.apply(|x| c(f(x), 0.0))))
}

/// Complex scalar function of a Hermitian matrix; the result is normal but in
/// general not Hermitian.
pub fn matrix_fn_complex<F: Fn(f64) -> Complex64>(m: &HermitianMatrix, f: F) -> CMat {
    hermitian_eig(m).apply(f)
}

/// Square root with `Im w >= 0`; positive reals map to the positive root.
pub fn principal_sqrt(z: Complex64) -> Complex64 {
    let w = z.sqrt();
    if w.im < 0.0 || (w.im == 0.0 && w.re < 0.0) {
        -w
    } else {
        w
    }
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].re;
    }
    eig_of_hermitian(m).values[0]
}

/// True iff the smallest eigenvalue is at least `-tol`.
pub fn psd_check(m: &HermitianMatrix, tol: f64) -> bool {
    min_eigenvalue(m.as_matrix()) >= -tol
}

/// Projects a Hermitian matrix onto the PSD cone by zeroing negative
/// eigenvalues. Returns the projection and the most negative eigenvalue seen.
pub fn psd_project(m: &CMat) -> (CMat, f64) {
    let e = eig_of_hermitian(m);
    let worst = e.values.first().copied().unwrap_or(0.0).min(0.0);
    if worst >= 0.0 {
        return (hermitian_part(m), 0.0);
    }
    (hermitian_part(&e.apply(|x| c(x.max(0.0), 0.0))), worst)
}

/// Number of eigenvalues above `tol`.
pub fn numerical_rank(m: &CMat, tol: f64) -> usize {
    eig_of_hermitian(m).values.iter().filter(|&&v| v > tol).count()
}

pub fn norm1(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse together with the 1-norm condition estimate `||m|| ||m^-1||`.
pub fn inverse_with_condition(m: &CMat) -> Option<(CMat, f64)> {
    let n = m.nrows();
    if n == 1 {
        let a = m[(0, 0)];
        if a.norm() == 0.0 || !a.norm().is_finite() {
            return None;
        }
        return Some((CMat::from_element(1, 1, a.inv()), 1.0));
    }
    let inv = m.clone().lu().try_inverse()?;
    if inv.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return None;
    }
    let cond = norm1(m) * norm1(&inv);
    Some((inv, cond))
}

/// `A^{-1} B` via LU; `None` if `A` is singular.
pub fn solve(a: &CMat, b: &CMat) -> Option<CMat> {
    if a.nrows() == 1 {
        let p = a[(0, 0)];
        if p.norm() == 0.0 {
            return None;
        }
        return Some(b * p.inv());
    }
    a.clone().lu().solve(b)
}

/// Thin QR of a tall matrix; returns `(Q, R)` with `Q` having orthonormal columns.
pub fn thin_qr(m: &CMat) -> (CMat, CMat) {
    let qr = m.clone().qr();
    (qr.q(), qr.r())
}

/// Stacks two blocks vertically.
pub fn vstack(top: &CMat, bottom: &CMat) -> CMat {
    let mut out = CMat::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// Concatenates two blocks horizontally.
pub fn hstack(left: &CMat, right: &CMat) -> CMat {
    let mut out = CMat::zeros(left.nrows(), left.ncols() + right.ncols());
    out.columns_mut(0, left.ncols()).copy_from(left);
    out.columns_mut(left.ncols(), right.ncols()).copy_from(right);
    out
}

/// Assembles a 2x2 block matrix.
pub fn block2(a: &CMat, b: &CMat, cc: &CMat, d: &CMat) -> CMat {
    let (r0, c0) = (a.nrows(), a.ncols());
    let mut out = CMat::zeros(r0 + cc.nrows(), c0 + b.ncols());
    out.view_mut((0, 0), (r0, c0)).copy_from(a);
    out.view_mut((0, c0), (b.nrows(), b.ncols())).copy_from(b);
    out.view_mut((r0, 0), (cc.nrows(), cc.ncols())).copy_from(cc);
    out.view_mut((r0, c0), (d.nrows(), d.ncols())).copy_from(d);
    out
}

/// A self-adjoint boundary condition `sin(alpha) u'(a) + cos(alpha) u(a) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    pub alpha: HermitianMatrix,
    pub sin_alpha: HermitianMatrix,
    pub cos_alpha: HermitianMatrix,
}

impl BoundaryCondition {
    pub fn new(alpha: HermitianMatrix) -> Result<Self> {
        let e = hermitian_eig(&alpha);
        let sin_alpha = HermitianMatrix(hermitian_part(&e.apply(|x| c(x.sin(), 0.0))));
        let cos_alpha = HermitianMatrix(hermitian_part(&e.apply(|x| c(x.cos(), 0.0))));
        let bc = Self {
            alpha,
            sin_alpha,
            cos_alpha,
        };
        bc.validate(Tolerances::default().id)?;
        Ok(bc)
    }

    /// `alpha = 0`: `u(a) = 0`.
    pub fn dirichlet(n: usize) -> Self {
        Self {
            alpha: HermitianMatrix::zeros(n),
            sin_alpha: HermitianMatrix::zeros(n),
            cos_alpha: HermitianMatrix::identity(n),
        }
    }

    /// `alpha = (pi/2) I`: `u'(a) = 0`.
    pub fn neumann(n: usize) -> Self {
        Self {
            alpha: HermitianMatrix::scaled_identity(n, std::f64::consts::FRAC_PI_2),
            sin_alpha: HermitianMatrix::identity(n),
            cos_alpha: HermitianMatrix::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.alpha.dim()
    }

    pub fn sin(&self) -> &CMat {
        self.sin_alpha.as_matrix()
    }

    pub fn cos(&self) -> &CMat {
        self.cos_alpha.as_matrix()
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let n = self.dim();
        let s = self.sin();
        let co = self.cos();
        let id_res = (s * s + co * co - CMat::identity(n, n)).norm();
        if id_res > tol {
            return Err(SpectralError::InvalidBoundaryCondition(format!(
                "sin^2 + cos^2 - I has norm {id_res:.3e}"
            )));
        }
        let comm = (s * co - co * s).norm();
        if comm > tol {
            return Err(SpectralError::InvalidBoundaryCondition(format!(
                "[sin, cos] has norm {comm:.3e}"
            )));
        }
        for m in [s, co] {
            let e = eig_of_hermitian(m);
            if e.values.iter().any(|v| v.abs() > 1.0 + tol) {
                return Err(SpectralError::InvalidBoundaryCondition(
                    "spectrum of sin/cos leaves [-1, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Rotation `[[cos, -sin], [sin, cos]]` mapping `(I; m)` to boundary data.
    pub fn rotation(&self) -> CMat {
        block2(self.cos(), &(-self.sin()), self.sin(), self.cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn random_hermitian(n: usize, seed: &[f64]) -> HermitianMatrix {
        let mut k = 0;
        let mut next = || {
            k += 1;
            seed[k % seed.len()] * (1.0 + 0.37 * k as f64).sin()
        };
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = c(next(), 0.0);
            for j in (i + 1)..n {
                let z = c(next(), next());
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        HermitianMatrix::new(m).unwrap()
    }

    /// Truncated Taylor series of cos for a matrix, used as an independent oracle.
    fn taylor_cos(m: &CMat, terms: usize) -> CMat {
        let n = m.nrows();
        let m2 = m * m;
        let mut term = CMat::identity(n, n);
        let mut sum = term.clone();
        for k in 1..terms {
            let denom = ((2 * k - 1) * (2 * k)) as f64;
            term = -(&term * &m2) / c(denom, 0.0);
            sum += &term;
        }
        sum
    }

    #[test]
    fn eig_identity() {
        let e = hermitian_eig(&HermitianMatrix::identity(2));
        assert_eq!(e.values, vec![1.0, 1.0]);
        assert_abs_diff_eq!((e.vectors - CMat::identity(2, 2)).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn eig_swap_matrix() {
        let m = HermitianMatrix::from_real(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = hermitian_eig(&m);
        assert_abs_diff_eq!(e.values[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-14);
        let s = 1.0 / 2f64.sqrt();
        // columns (1, -1)/sqrt2 and (1, 1)/sqrt2 up to the fixed phase
        let v0 = e.vectors.column(0);
        let v1 = e.vectors.column(1);
        assert_abs_diff_eq!((v0[0] * v0[1].conj()).re, -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(v1[0].norm(), s, epsilon = 1e-14);
        assert_abs_diff_eq!((v1[0] * v1[1].conj()).re, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn eig_random_reconstruction() {
        let m = random_hermitian(4, &[0.3, -1.2, 0.8, 2.1, -0.4, 1.7, 0.05]);
        let e = hermitian_eig(&m);
        let scale = m.as_matrix().norm();
        assert!((e.reconstruct() - m.as_matrix()).norm() <= 1e-10 * scale);
        let u = &e.vectors;
        assert!((u.adjoint() * u - CMat::identity(4, 4)).norm() <= 1e-10);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eig_is_deterministic() {
        let m = random_hermitian(3, &[1.0, 0.2, -0.7, 0.4]);
        let a = hermitian_eig(&m);
        let b = hermitian_eig(&m);
        assert_eq!(a.values, b.values);
        assert_eq!(a.vectors, b.vectors);
        for j in 0..3 {
            let col = a.vectors.column(j);
            let p = col.iter().max_by(|x, y| x.norm().total_cmp(&y.norm())).unwrap();
            assert!(p.im.abs() < 1e-14 && p.re > 0.0);
        }
    }

    #[test]
    fn nonhermitian_rejected() {
        let m = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(
            HermitianMatrix::new(m),
            Err(SpectralError::NonHermitian { .. })
        ));
    }

    #[test]
    fn small_asymmetry_is_symmetrized() {
        let m = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 1e-14), c(2.0, 0.0), c(1.0, 0.0)]);
        let h = HermitianMatrix::new(m).unwrap();
        assert_eq!(asymmetry(h.as_matrix()), 0.0);
    }

    #[test]
    fn matrix_fn_scalar_cases() {
        let z = HermitianMatrix::zeros(2);
        assert_abs_diff_eq!(matrix_fn(&z, f64::sin).as_matrix().norm(), 0.0);
        assert_abs_diff_eq!(
            (matrix_fn(&z, f64::cos).as_matrix() - CMat::identity(2, 2)).norm(),
            0.0
        );
        let h = HermitianMatrix::scaled_identity(2, FRAC_PI_2);
        assert_abs_diff_eq!(
            (matrix_fn(&h, f64::sin).as_matrix() - CMat::identity(2, 2)).norm(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn matrix_cos_of_offdiagonal_against_taylor() {
        let m = HermitianMatrix::from_real(&[vec![0.0, FRAC_PI_2], vec![FRAC_PI_2, 0.0]]).unwrap();
        let via_eig = matrix_fn(&m, f64::cos);
        let oracle = taylor_cos(m.as_matrix(), 8);
        // eigenvalues +-pi/2 so cos is zero; the 8-term series is accurate to ~1e-5
        assert!(via_eig.as_matrix().norm() < 1e-15);
        assert!((via_eig.as_matrix() - &oracle).norm() < 1e-5);
        let oracle_long = taylor_cos(m.as_matrix(), 30);
        assert!((via_eig.as_matrix() - &oracle_long).norm() < 1e-14);
    }

    #[test]
    fn sqrt_branch() {
        assert_abs_diff_eq!((principal_sqrt(c(0.0, 2.0)) - c(1.0, 1.0)).norm(), 0.0, epsilon = 1e-15);
        assert_eq!(principal_sqrt(c(4.0, 0.0)), c(2.0, 0.0));
        assert_abs_diff_eq!((principal_sqrt(c(-1.0, 0.0)) - c(0.0, 1.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((principal_sqrt(c(-1.0, -0.0)) - c(0.0, 1.0)).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn psd_tolerance_semantics() {
        assert!(psd_check(&HermitianMatrix::identity(3), 0.0));
        assert!(!psd_check(&HermitianMatrix::diagonal(&[1.0, -1e-3]), 1e-6));
        assert!(psd_check(&HermitianMatrix::diagonal(&[1.0, -1e-9]), 1e-6));
    }

    #[test]
    fn boundary_conditions_named() {
        let d = BoundaryCondition::dirichlet(2);
        d.validate(1e-12).unwrap();
        let n = BoundaryCondition::neumann(2);
        n.validate(1e-12).unwrap();
        let built = BoundaryCondition::new(HermitianMatrix::scaled_identity(2, FRAC_PI_2)).unwrap();
        assert!((built.sin() - n.sin()).norm() < 1e-15);
        assert!((built.cos() - n.cos()).norm() < 1e-15);
    }

    #[test]
    fn inverse_condition_flags_singular() {
        let m = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)]);
        let r = inverse_with_condition(&m);
        assert!(r.is_none() || r.unwrap().1 > 1e12);
        let (inv, cond) = inverse_with_condition(&CMat::identity(3, 3)).unwrap();
        assert_eq!(cond, 1.0);
        assert_eq!(inv, CMat::identity(3, 3));
    }

    fn hermitian_strategy(n: usize) -> impl Strategy<Value = HermitianMatrix> {
        proptest::collection::vec(-3.0f64..3.0, n * n).prop_map(move |v| {
            let mut m = CMat::zeros(n, n);
            let mut k = 0;
            for i in 0..n {
                m[(i, i)] = c(v[k], 0.0);
                k += 1;
                for j in (i + 1)..n {
                    let z = c(v[k], v[k + 1]);
                    k += 2;
                    m[(i, j)] = z;
                    m[(j, i)] = z.conj();
                }
            }
            HermitianMatrix::new(m).unwrap()
        })
    }

    proptest! {
        #[test]
        fn sin_cos_pythagoras(m in (1usize..5).prop_flat_map(hermitian_strategy)) {
            let s = matrix_fn(&m, f64::sin);
            let co = matrix_fn(&m, f64::cos);
            let n = m.dim();
            let res = (s.as_matrix() * s.as_matrix() + co.as_matrix() * co.as_matrix() - CMat::identity(n, n)).norm();
            prop_assert!(res < 1e-10);
            prop_assert!(BoundaryCondition::new(m).is_ok());
        }

        #[test]
        fn sqrt_maps_upper_half_plane_to_quadrant(re in -50.0f64..50.0, im in 1e-6f64..50.0) {
            let z = c(re, im);
            let w = principal_sqrt(z);
            prop_assert!(w.re > 0.0 && w.im > 0.0);
            prop_assert!((w * w - z).norm() <= 1e-12 * z.norm().max(1.0));
            let wc = principal_sqrt(z.conj());
            // the Im >= 0 branch maps conj(z) to -conj(sqrt z)
            prop_assert!((wc + w.conj()).norm() <= 1e-12 * w.norm().max(1.0));
        }

        #[test]
        fn eigenvalues_sorted_and_reconstruct(m in (1usize..6).prop_flat_map(hermitian_strategy)) {
            let e = hermitian_eig(&m);
            prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
            let scale = m.as_matrix().norm().max(1e-300);
            prop_assert!((e.reconstruct() - m.as_matrix()).norm() <= 1e-10 * scale.max(1.0));
        }
    }
}
