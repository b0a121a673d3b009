//! Full-line operator: the pair `m_+-`, the block Weyl matrix `M`, its
//! measure `Omega`, the Green's function and the `2n`-component transform.

use num_complex::Complex64;

use crate::config::ExecMode;
use crate::error::{Result, SpectralError};
use crate::expansion::{forward_transform, inverse_transform, max_multiplicity, solve_on_grid, support_and_spectrum, SpectralBasis, TransformResult};
use crate::halfline::{cumulative, Side, WeylFunction};
use crate::herglotz::{assemble_measure, AssemblyOptions, MatrixFunction, MatrixMeasure};
use crate::ivp::{fundamental_system, PotentialSpec};
use crate::matfun::{block2, c, hstack, inverse_with_condition, BoundaryCondition, CMat, CVec};
use crate::par::try_map_indexed;

/// `m_+` of `(x0, inf)` and `m_-` of `(-inf, x0)`, both for the boundary
/// condition `bc` at `x0`. With the sign conventions used here `m_+` and
/// `-m_-` are Herglotz; for `V = 0`, `alpha = 0`: `m_+-(z) = +-i sqrt z`.
#[derive(Debug, Clone)]
pub struct FullLineWeyl {
    pub x0: f64,
    pub plus: WeylFunction,
    pub minus: WeylFunction,
}

/// The four `n x n` blocks of `M(z)` plus the commuted form of `M_11`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeylMatrix {
    pub m00: CMat,
    pub m01: CMat,
    pub m10: CMat,
    pub m11: CMat,
    /// `m_- W^{-1} m_+`, which must agree with `m11 = m_+ W^{-1} m_-`.
    pub m11_alt: CMat,
}

impl BlockWeylMatrix {
    pub fn full(&self) -> CMat {
        block2(&self.m00, &self.m01, &self.m10, &self.m11)
    }

    pub fn ordering_gap(&self) -> f64 {
        (&self.m11 - &self.m11_alt).norm()
    }
}

impl FullLineWeyl {
    pub fn new(potential: PotentialSpec, x0: f64, bc: BoundaryCondition) -> Result<Self> {
        let plus = WeylFunction::with_side(potential.clone(), x0, bc.clone(), Side::Right)?;
        let minus = WeylFunction::with_side(potential, x0, bc, Side::Left)?;
        Ok(Self { x0, plus, minus })
    }

    pub fn with_config(mut self, config: crate::config::NumericConfig) -> Self {
        self.plus = self.plus.with_config(config);
        self.minus = self.minus.with_config(config);
        self
    }

    pub fn dim(&self) -> usize {
        self.plus.dim()
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.plus.potential
    }

    pub fn bc(&self) -> &BoundaryCondition {
        &self.plus.bc
    }

    fn exec(&self) -> ExecMode {
        self.plus.config.exec
    }

    /// `(m_+(z), m_-(z))`, evaluated concurrently.
    pub fn m_pair(&self, z: Complex64) -> Result<(CMat, CMat)> {
        let mut both = try_map_indexed(self.exec(), 2, |i| {
            if i == 0 {
                Ok(self.plus.compute(z)?.m)
            } else {
                Ok(self.minus.compute(z)?.m)
            }
        })?;
        let mm = both.pop().expect("two values");
        let mp = both.pop().expect("two values");
        Ok((mp, mm))
    }

    /// `W(z) = m_-(z) - m_+(z)`.
    pub fn wronskian(&self, z: Complex64) -> Result<CMat> {
        let (mp, mm) = self.m_pair(z)?;
        Ok(mm - mp)
    }

    fn w_inverse(&self, w: &CMat) -> Result<CMat> {
        let (inv, cond) = inverse_with_condition(w).ok_or(SpectralError::SingularW {
            condition: f64::INFINITY,
        })?;
        if cond > self.plus.config.tol.cond_limit {
            return Err(SpectralError::SingularW { condition: cond });
        }
        Ok(inv)
    }

    pub fn block_weyl(&self, z: Complex64) -> Result<BlockWeylMatrix> {
        if z.im == 0.0 {
            return Err(SpectralError::RealSpectralParameter);
        }
        let (mp, mm) = self.m_pair(z)?;
        let w = &mm - &mp;
        let wi = self.w_inverse(&w)?;
        let sum = (&mm + &mp) * c(0.5, 0.0);
        Ok(BlockWeylMatrix {
            m01: &wi * &sum,
            m10: &sum * &wi,
            m11: &mp * &wi * &mm,
            m11_alt: &mm * &wi * &mp,
            m00: wi,
        })
    }

    /// `(psi, psi')` of one side on arbitrary points: the stable decaying
    /// form on its own ray, `theta + phi m` continued across `x0`.
    pub fn psi_on(&self, side: Side, z: Complex64, points: &[f64]) -> Result<(Vec<CMat>, Vec<CMat>)> {
        let w = match side {
            Side::Right => &self.plus,
            Side::Left => &self.minus,
        };
        let on_ray = |x: f64| match side {
            Side::Right => x >= self.x0,
            Side::Left => x <= self.x0,
        };
        let inside: Vec<f64> = points.iter().copied().filter(|&x| on_ray(x)).collect();
        let outside: Vec<f64> = points.iter().copied().filter(|&x| !on_ray(x)).collect();
        let (pi, ppi) = if inside.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            w.weyl_solution(z, &inside)?
        };
        let (mut po, mut ppo) = (Vec::new(), Vec::new());
        if !outside.is_empty() {
            let m = w.compute(z)?.m;
            let mut grid = outside.clone();
            grid.push(self.x0);
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let fp = fundamental_system(w.potential_ref(), z, self.x0, &w.bc, &grid, &w.config.integrator)?;
            for &x in &outside {
                let k = grid.iter().position(|&g| g == x).expect("point present");
                po.push(&fp.theta[k] + &fp.phi[k] * &m);
                ppo.push(&fp.theta_prime[k] + &fp.phi_prime[k] * &m);
            }
        }
        let (mut a, mut b) = (pi.into_iter().zip(ppi), po.into_iter().zip(ppo));
        Ok(points
            .iter()
            .map(|&x| if on_ray(x) { a.next() } else { b.next() }.expect("partitioned"))
            .unzip())
    }

    /// Green's function `psi_-+(z, x) W^{-1} psi_+-(conj z, x')^*` for `x <> x'`.
    pub fn greens(&self, z: Complex64, x: f64, xp: f64) -> Result<CMat> {
        if z.im == 0.0 {
            return Err(SpectralError::RealSpectralParameter);
        }
        let wi = self.w_inverse(&self.wronskian(z)?)?;
        let (near, far) = if x <= xp { (Side::Left, Side::Right) } else { (Side::Right, Side::Left) };
        let (a, _) = self.psi_on(near, z, &[x])?;
        let (b, _) = self.psi_on(far, z.conj(), &[xp])?;
        Ok(&a[0] * wi * b[0].adjoint())
    }

    /// `(H - z)^{-1} u` on an increasing grid; `u` vanishes off the grid.
    pub fn resolvent_apply(&self, z: Complex64, grid: &[f64], u: &[CVec]) -> Result<Vec<CVec>> {
        if z.im == 0.0 {
            return Err(SpectralError::RealSpectralParameter);
        }
        if grid.len() != u.len() {
            return Err(SpectralError::GridMismatch);
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectralError::InvalidInput("grid must be strictly increasing".into()));
        }
        let wi = self.w_inverse(&self.wronskian(z)?)?;
        let (pp, _) = self.psi_on(Side::Right, z, grid)?;
        let (pm, _) = self.psi_on(Side::Left, z, grid)?;
        let (ppc, _) = self.psi_on(Side::Right, z.conj(), grid)?;
        let (pmc, _) = self.psi_on(Side::Left, z.conj(), grid)?;
        let left: Vec<CVec> = (0..grid.len()).map(|k| pmc[k].adjoint() * &u[k]).collect();
        let right: Vec<CVec> = (0..grid.len()).map(|k| ppc[k].adjoint() * &u[k]).collect();
        let cl = cumulative(grid, &left);
        let cr = cumulative(grid, &right);
        let last = cr.len() - 1;
        Ok((0..grid.len())
            .map(|k| &pp[k] * (&wi * &cl[k]) + &pm[k] * (&wi * (&cr[last] - &cr[k])))
            .collect())
    }

    /// `psi_+(conj z)^* psi_-'(z) - psi_+'(conj z)^* psi_-(z)` at each point;
    /// constant in `x` and equal to `W(z)`.
    pub fn wronskian_profile(&self, z: Complex64, points: &[f64]) -> Result<Vec<CMat>> {
        let (a, ap) = self.psi_on(Side::Right, z.conj(), points)?;
        let (b, bp) = self.psi_on(Side::Left, z, points)?;
        Ok((0..points.len())
            .map(|k| a[k].adjoint() * &bp[k] - ap[k].adjoint() * &b[k])
            .collect())
    }
}

impl WeylFunction {
    pub(crate) fn potential_ref(&self) -> &PotentialSpec {
        &self.potential
    }
}

impl MatrixFunction for FullLineWeyl {
    fn dim(&self) -> usize {
        2 * FullLineWeyl::dim(self)
    }
    fn eval(&self, z: Complex64) -> Result<CMat> {
        Ok(self.block_weyl(z)?.full())
    }
}

/// `[theta(lambda, x) phi(lambda, x)]` with data at `x0`.
#[derive(Debug, Clone)]
pub struct FullLineBasis<'a> {
    pub flw: &'a FullLineWeyl,
}

impl SpectralBasis for FullLineBasis<'_> {
    fn dim(&self) -> usize {
        self.flw.dim()
    }
    fn width(&self) -> usize {
        2 * self.flw.dim()
    }
    fn sample(&self, lambda: f64, grid: &[f64]) -> Result<Vec<CMat>> {
        let bc = self.flw.bc();
        let y0 = hstack(bc.cos(), &(-bc.sin()));
        let y1 = hstack(bc.sin(), bc.cos());
        solve_on_grid(
            self.flw.potential(),
            c(lambda, 0.0),
            self.flw.x0,
            &y0,
            &y1,
            grid,
            &self.flw.plus.config.integrator,
        )
    }
}

/// `Omega` on `H^2`, assembled from the block Weyl matrix.
pub fn fullline_measure(flw: &FullLineWeyl, breakpoints: &[f64], opts: &AssemblyOptions) -> Result<MatrixMeasure> {
    let mut m = assemble_measure(flw, breakpoints, opts)?;
    m.block = Some(2 * flw.dim());
    Ok(m)
}

pub fn fullline_transform(
    flw: &FullLineWeyl,
    grid: &[f64],
    h: &[CVec],
    measure: &MatrixMeasure,
    exec: ExecMode,
) -> Result<TransformResult> {
    forward_transform(&FullLineBasis { flw }, grid, h, measure, exec)
}

pub fn fullline_inverse(t: &TransformResult, flw: &FullLineWeyl, x_grid: &[f64], exec: ExecMode) -> Result<Vec<CVec>> {
    inverse_transform(t, &FullLineBasis { flw }, x_grid, exec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub intervals: Vec<(f64, f64)>,
    /// Largest rank of a cell or atom mass; at most `2n`.
    pub multiplicity: usize,
}

pub fn fullline_spectrum(measure: &MatrixMeasure, tol: f64) -> Result<SpectrumReport> {
    let multiplicity = max_multiplicity(measure, tol);
    if multiplicity > measure.dim {
        return Err(SpectralError::InvalidInput(format!(
            "cell mass rank {multiplicity} exceeds 2n = {}",
            measure.dim
        )));
    }
    Ok(SpectrumReport {
        intervals: support_and_spectrum(measure, tol),
        multiplicity,
    })
}
