//! Initial value problems for `-y'' + V y = z y + f` and fundamental systems.

mod dopri;
mod potential;

pub use dopri::integrate;
pub use potential::{PotentialKind, PotentialSpec, SquareWell, Tail};

use crate::config::{IntegratorSettings, Tolerances};
use crate::error::{Result, SpectralError};
use crate::matfun::{block2, c, inverse_with_condition, norm1, BoundaryCondition, CMat, CVec};
use crate::quad::grid_weights;
use num_complex::Complex64;

/// Forcing term `f(x)` for the vector problem.
pub type Forcing<'a> = &'a (dyn Fn(f64) -> CVec + Sync);

#[derive(Debug, Clone, PartialEq)]
pub struct VectorSolution {
    pub z: Complex64,
    pub x0: f64,
    pub grid: Vec<f64>,
    pub y: Vec<CVec>,
    pub y_prime: Vec<CVec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSolution {
    pub z: Complex64,
    pub x0: f64,
    pub grid: Vec<f64>,
    pub y: Vec<CMat>,
    pub y_prime: Vec<CMat>,
}

impl MatrixSolution {
    /// Pointwise adjoint `F(x)^*`, the row form used in operator Wronskians.
    pub fn adjoint(&self) -> MatrixSolution {
        MatrixSolution {
            z: self.z.conj(),
            x0: self.x0,
            grid: self.grid.clone(),
            y: self.y.iter().map(|m| m.adjoint()).collect(),
            y_prime: self.y_prime.iter().map(|m| m.adjoint()).collect(),
        }
    }

    pub fn column(&self, j: usize) -> VectorSolution {
        VectorSolution {
            z: self.z,
            x0: self.x0,
            grid: self.grid.clone(),
            y: self.y.iter().map(|m| m.column(j).into_owned()).collect(),
            y_prime: self.y_prime.iter().map(|m| m.column(j).into_owned()).collect(),
        }
    }
}

/// `theta`, `phi` with `theta(x0) = cos a`, `theta'(x0) = sin a`,
/// `phi(x0) = -sin a`, `phi'(x0) = cos a`.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalPair {
    pub z: Complex64,
    pub x0: f64,
    pub grid: Vec<f64>,
    pub theta: Vec<CMat>,
    pub theta_prime: Vec<CMat>,
    pub phi: Vec<CMat>,
    pub phi_prime: Vec<CMat>,
    pub bc: BoundaryCondition,
}

impl FundamentalPair {
    /// The block `[[theta, phi], [theta', phi']]` at grid index `k`.
    pub fn block(&self, k: usize) -> CMat {
        block2(&self.theta[k], &self.phi[k], &self.theta_prime[k], &self.phi_prime[k])
    }

    pub fn theta_solution(&self) -> MatrixSolution {
        MatrixSolution {
            z: self.z,
            x0: self.x0,
            grid: self.grid.clone(),
            y: self.theta.clone(),
            y_prime: self.theta_prime.clone(),
        }
    }

    pub fn phi_solution(&self) -> MatrixSolution {
        MatrixSolution {
            z: self.z,
            x0: self.x0,
            grid: self.grid.clone(),
            y: self.phi.clone(),
            y_prime: self.phi_prime.clone(),
        }
    }
}

/// Claimed inverse of the block at `z`, built from the system at `conj z`.
pub fn block_inverse(conj_pair: &FundamentalPair, k: usize) -> CMat {
    let p = conj_pair;
    block2(
        &p.phi_prime[k].adjoint(),
        &(-p.phi[k].adjoint()),
        &(-p.theta_prime[k].adjoint()),
        &p.theta[k].adjoint(),
    )
}

fn index_of(grid: &[f64], x0: f64) -> Option<usize> {
    let tol = 1e-12 * x0.abs().max(1.0);
    grid.iter().position(|&x| (x - x0).abs() <= tol)
}

fn check_grid(v: &PotentialSpec, x0: f64, grid: &[f64]) -> Result<usize> {
    let (lo, hi) = v.domain();
    for &x in grid.iter().chain(std::iter::once(&x0)) {
        if !x.is_finite() || !v.contains(x) {
            return Err(SpectralError::GridOutsideDomain { x, lo, hi });
        }
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SpectralError::InvalidInput("grid must be strictly increasing".into()));
    }
    index_of(grid, x0).ok_or(SpectralError::GridMissingInitialPoint { x0 })
}

/// Right-hand side of the first-order system for the stacked state `[Y; Y']`.
fn rhs(v: &PotentialSpec, z: Complex64, x: f64, y: &CMat, seg: (f64, f64), forcing: Option<Forcing>) -> CMat {
    let n = v.dim();
    let k = y.ncols();
    let top = y.rows(0, n);
    let mut vz = v.value_in_segment(x, seg.0, seg.1);
    for i in 0..n {
        vz[(i, i)] -= z;
    }
    let mut out = CMat::zeros(2 * n, k);
    out.rows_mut(0, n).copy_from(&y.rows(n, n));
    let mut bottom = &vz * top;
    if let Some(f) = forcing {
        let fx = f(x);
        for j in 0..k {
            for i in 0..n {
                bottom[(i, j)] -= fx[i];
            }
        }
    }
    out.rows_mut(n, n).copy_from(&bottom);
    out
}

/// Integrates the stacked state from `x_from` toward `x_to`, splitting at
/// potential breakpoints, and returns the state at each of `outputs` (which
/// must be ordered from `x_from` toward `x_to`) plus the final state.
fn sweep(
    v: &PotentialSpec,
    z: Complex64,
    x_from: f64,
    state: CMat,
    x_to: f64,
    outputs: &[f64],
    forcing: Option<Forcing>,
    settings: &IntegratorSettings,
) -> Result<(CMat, Vec<CMat>)> {
    let forward = x_to >= x_from;
    let mut stops: Vec<f64> = v
        .breakpoints()
        .into_iter()
        .filter(|&b| if forward { b > x_from && b < x_to } else { b < x_from && b > x_to })
        .collect();
    if !forward {
        stops.reverse();
    }
    stops.push(x_to);

    let mut y = state;
    let mut x = x_from;
    let mut out = Vec::with_capacity(outputs.len());
    let mut next = 0;
    for &s in &stops {
        let seg = if forward { (x, s) } else { (s, x) };
        let end = next
            + outputs[next..]
                .iter()
                .take_while(|&&o| if forward { o <= s } else { o >= s })
                .count();
        let (y1, dense) = integrate(settings, |xx, yy| rhs(v, z, xx, yy, seg, forcing), x, y, s, &outputs[next..end])?;
        out.extend(dense);
        next = end;
        y = y1;
        x = s;
    }
    Ok((y, out))
}

/// Solves for the stacked state `[Y; Y']` on an increasing grid containing `x0`.
pub fn propagate(
    v: &PotentialSpec,
    z: Complex64,
    x0: f64,
    state0: &CMat,
    grid: &[f64],
    forcing: Option<Forcing>,
    settings: &IntegratorSettings,
) -> Result<Vec<CMat>> {
    let i0 = check_grid(v, x0, grid)?;
    let n = v.dim();
    if state0.nrows() != 2 * n {
        return Err(SpectralError::DimensionMismatch {
            expected: 2 * n,
            found: state0.nrows(),
        });
    }
    let mut states = vec![CMat::zeros(0, 0); grid.len()];
    states[i0] = state0.clone();
    if i0 + 1 < grid.len() {
        let outs = &grid[i0 + 1..];
        let (_, dense) = sweep(v, z, x0, state0.clone(), *outs.last().unwrap(), outs, forcing, settings)?;
        for (k, s) in dense.into_iter().enumerate() {
            states[i0 + 1 + k] = s;
        }
    }
    if i0 > 0 {
        let outs: Vec<f64> = grid[..i0].iter().rev().copied().collect();
        let (_, dense) = sweep(v, z, x0, state0.clone(), outs[outs.len() - 1], &outs, forcing, settings)?;
        for (k, s) in dense.into_iter().enumerate() {
            states[i0 - 1 - k] = s;
        }
    }
    Ok(states)
}

/// Moves a stacked state from `x_from` to `x_to` (either direction).
pub fn transport(
    v: &PotentialSpec,
    z: Complex64,
    x_from: f64,
    state: CMat,
    x_to: f64,
    settings: &IntegratorSettings,
) -> Result<CMat> {
    let (lo, hi) = v.domain();
    for x in [x_from, x_to] {
        if !x.is_finite() || !v.contains(x) {
            return Err(SpectralError::GridOutsideDomain { x, lo, hi });
        }
    }
    Ok(sweep(v, z, x_from, state, x_to, &[], None, settings)?.0)
}

pub fn solve_vector_ivp(
    v: &PotentialSpec,
    z: Complex64,
    x0: f64,
    h0: &CVec,
    h1: &CVec,
    forcing: Option<Forcing>,
    grid: &[f64],
    settings: &IntegratorSettings,
) -> Result<VectorSolution> {
    let n = v.dim();
    for h in [h0, h1] {
        if h.len() != n {
            return Err(SpectralError::DimensionMismatch { expected: n, found: h.len() });
        }
    }
    let mut s0 = CMat::zeros(2 * n, 1);
    s0.view_mut((0, 0), (n, 1)).copy_from(h0);
    s0.view_mut((n, 0), (n, 1)).copy_from(h1);
    let states = propagate(v, z, x0, &s0, grid, forcing, settings)?;
    let i0 = index_of(grid, x0).unwrap_or(0);
    let mut y: Vec<CVec> = states.iter().map(|s| s.view((0, 0), (n, 1)).column(0).into_owned()).collect();
    let mut yp: Vec<CVec> = states.iter().map(|s| s.view((n, 0), (n, 1)).column(0).into_owned()).collect();
    y[i0] = h0.clone();
    yp[i0] = h1.clone();
    Ok(VectorSolution {
        z,
        x0,
        grid: grid.to_vec(),
        y,
        y_prime: yp,
    })
}

pub fn solve_operator_ivp(
    v: &PotentialSpec,
    z: Complex64,
    x0: f64,
    y0: &CMat,
    y1: &CMat,
    grid: &[f64],
    settings: &IntegratorSettings,
) -> Result<MatrixSolution> {
    let n = v.dim();
    if y0.nrows() != n || y1.nrows() != n || y0.ncols() != y1.ncols() {
        return Err(SpectralError::DimensionMismatch {
            expected: n,
            found: if y0.nrows() != n { y0.nrows() } else { y1.nrows() },
        });
    }
    let s0 = crate::matfun::vstack(y0, y1);
    let states = propagate(v, z, x0, &s0, grid, None, settings)?;
    let k = y0.ncols();
    let i0 = index_of(grid, x0).unwrap_or(0);
    let mut y: Vec<CMat> = states.iter().map(|s| s.view((0, 0), (n, k)).into_owned()).collect();
    let mut yp: Vec<CMat> = states.iter().map(|s| s.view((n, 0), (n, k)).into_owned()).collect();
    y[i0] = y0.clone();
    yp[i0] = y1.clone();
    Ok(MatrixSolution {
        z,
        x0,
        grid: grid.to_vec(),
        y,
        y_prime: yp,
    })
}

pub fn fundamental_system(
    v: &PotentialSpec,
    z: Complex64,
    x0: f64,
    bc: &BoundaryCondition,
    grid: &[f64],
    settings: &IntegratorSettings,
) -> Result<FundamentalPair> {
    let n = v.dim();
    if bc.dim() != n {
        return Err(SpectralError::DimensionMismatch { expected: n, found: bc.dim() });
    }
    // both solutions in one sweep: columns [theta | phi]
    let s = bc.sin();
    let co = bc.cos();
    let y0 = crate::matfun::hstack(co, &(-s));
    let y1 = crate::matfun::hstack(s, co);
    let sol = solve_operator_ivp(v, z, x0, &y0, &y1, grid, settings)?;
    let split = |ms: &[CMat], off: usize| -> Vec<CMat> { ms.iter().map(|m| m.columns(off, n).into_owned()).collect() };
    Ok(FundamentalPair {
        z,
        x0,
        grid: grid.to_vec(),
        theta: split(&sol.y, 0),
        theta_prime: split(&sol.y_prime, 0),
        phi: split(&sol.y, n),
        phi_prime: split(&sol.y_prime, n),
        bc: bc.clone(),
    })
}

/// `(theta, theta', phi, phi')` at a single point.
pub fn fundamental_at(
    v: &PotentialSpec,
    z: Complex64,
    x0: f64,
    bc: &BoundaryCondition,
    x: f64,
    settings: &IntegratorSettings,
) -> Result<(CMat, CMat, CMat, CMat)> {
    let grid = if (x - x0).abs() <= 1e-12 * x0.abs().max(1.0) {
        vec![x0]
    } else if x > x0 {
        vec![x0, x]
    } else {
        vec![x, x0]
    };
    let fp = fundamental_system(v, z, x0, bc, &grid, settings)?;
    let k = if x > x0 { grid.len() - 1 } else { 0 };
    Ok((
        fp.theta[k].clone(),
        fp.theta_prime[k].clone(),
        fp.phi[k].clone(),
        fp.phi_prime[k].clone(),
    ))
}

/// `(f1, f2')_H - (f1', f2)_H` at each grid point.
pub fn wronskian_vector(f1: &VectorSolution, f2: &VectorSolution) -> Result<Vec<Complex64>> {
    if f1.grid != f2.grid {
        return Err(SpectralError::GridMismatch);
    }
    Ok((0..f1.grid.len())
        .map(|k| f1.y[k].dotc(&f2.y_prime[k]) - f1.y_prime[k].dotc(&f2.y[k]))
        .collect())
}

/// `F1 F2' - F1' F2` at each grid point, with `F1` already in row (adjoint) form.
pub fn wronskian_operator(f1: &MatrixSolution, f2: &MatrixSolution) -> Result<Vec<CMat>> {
    if f1.grid != f2.grid {
        return Err(SpectralError::GridMismatch);
    }
    if f1.y[0].ncols() != f2.y[0].nrows() {
        return Err(SpectralError::DimensionMismatch {
            expected: f1.y[0].ncols(),
            found: f2.y[0].nrows(),
        });
    }
    Ok((0..f1.grid.len())
        .map(|k| &f1.y[k] * &f2.y_prime[k] - &f1.y_prime[k] * &f2.y[k])
        .collect())
}

/// Worst identity-block defect over the grid, in both orders, scaled by the
/// product of the block norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WronskianReport {
    pub max_raw: f64,
    pub max_scaled: f64,
}

impl WronskianReport {
    pub fn passes(&self, tol: &Tolerances) -> bool {
        self.max_scaled <= tol.wronskian
    }
}

/// Checks `Theta(z) Theta(z)^{-1} = I` and `Theta(z)^{-1} Theta(z) = I` at every grid point.
pub fn identity_block_residual(pair: &FundamentalPair, conj_pair: &FundamentalPair) -> Result<WronskianReport> {
    if pair.grid != conj_pair.grid {
        return Err(SpectralError::GridMismatch);
    }
    let m = 2 * pair.bc.dim();
    let id = CMat::identity(m, m);
    let mut max_raw: f64 = 0.0;
    let mut max_scaled: f64 = 0.0;
    for k in 0..pair.grid.len() {
        let b = pair.block(k);
        let bi = block_inverse(conj_pair, k);
        let r = norm1(&(&b * &bi - &id)).max(norm1(&(&bi * &b - &id)));
        max_raw = max_raw.max(r);
        max_scaled = max_scaled.max(r / (norm1(&b) * norm1(&bi)).max(1.0));
    }
    Ok(WronskianReport { max_raw, max_scaled })
}

/// The eight Wronskian-type identities between the systems at `z` and
/// `conj z`: the four from the left inverse, then the four from the right
/// inverse. Each entry is the worst defect over the grid relative to the
/// size of the products involved.
pub fn wronskian_identities(pair: &FundamentalPair, conj_pair: &FundamentalPair) -> Result<[f64; 8]> {
    if pair.grid != conj_pair.grid {
        return Err(SpectralError::GridMismatch);
    }
    let n = pair.bc.dim();
    let id = CMat::identity(n, n);
    let zero = CMat::zeros(n, n);
    let mut out = [0.0f64; 8];
    for k in 0..pair.grid.len() {
        let (t, tp, p, pp) = (&pair.theta[k], &pair.theta_prime[k], &pair.phi[k], &pair.phi_prime[k]);
        let tc = conj_pair.theta[k].adjoint();
        let tpc = conj_pair.theta_prime[k].adjoint();
        let pc = conj_pair.phi[k].adjoint();
        let ppc = conj_pair.phi_prime[k].adjoint();
        // (A, B, C, D, target): A B - C D = target
        let terms: [(&CMat, &CMat, &CMat, &CMat, &CMat); 8] = [
            (&tpc, t, &tc, tp, &zero),
            (&ppc, p, &pc, pp, &zero),
            (&ppc, t, &pc, tp, &id),
            (&tc, pp, &tpc, p, &id),
            (p, &tc, t, &pc, &zero),
            (pp, &tpc, tp, &ppc, &zero),
            (pp, &tc, tp, &pc, &id),
            (t, &ppc, p, &tpc, &id),
        ];
        for (slot, (a, b, cc, d, target)) in out.iter_mut().zip(terms) {
            let r = norm1(&(a * b - cc * d - target));
            let scale = (norm1(a) * norm1(b) + norm1(cc) * norm1(d)).max(1.0);
            *slot = slot.max(r / scale);
        }
    }
    Ok(out)
}

/// Builds the pair at `z` and `conj z` on the same grid and checks the block identities.
pub fn verify_fundamental_system(
    v: &PotentialSpec,
    z: Complex64,
    x0: f64,
    bc: &BoundaryCondition,
    grid: &[f64],
    settings: &IntegratorSettings,
) -> Result<WronskianReport> {
    let p = fundamental_system(v, z, x0, bc, grid, settings)?;
    let q = fundamental_system(v, z.conj(), x0, bc, grid, settings)?;
    identity_block_residual(&p, &q)
}

/// Green's formula for `F1 = theta(conj z1)^*` and `F2 = phi(z2)` on the grid:
/// `int (tau F1^*)^* F2 - F1 tau F2 = W(d) - W(c)`. Returns the relative defect.
pub fn green_identity_residual(
    v: &PotentialSpec,
    z1: Complex64,
    z2: Complex64,
    x0: f64,
    bc: &BoundaryCondition,
    grid: &[f64],
    settings: &IntegratorSettings,
) -> Result<f64> {
    let p1 = fundamental_system(v, z1.conj(), x0, bc, grid, settings)?;
    let p2 = fundamental_system(v, z2, x0, bc, grid, settings)?;
    let f1 = p1.theta_solution().adjoint();
    let f2 = p2.phi_solution();
    let w = wronskian_operator(&f1, &f2)?;
    let weights = grid_weights(grid);
    let n = bc.dim();
    let mut integral = CMat::zeros(n, n);
    let mut scale: f64 = 0.0;
    for (k, wk) in weights.iter().enumerate() {
        let term = &f1.y[k] * &f2.y[k] * (z1 - z2);
        scale = scale.max(term.norm());
        integral += term * c(*wk, 0.0);
    }
    let last = grid.len() - 1;
    let rhs = &w[last] - &w[0];
    let span = grid[last] - grid[0];
    Ok((integral - &rhs).norm() / (rhs.norm() + scale * span).max(1.0))
}

/// Relative ODE residual `|-y'' + (V - z) y - f|` at interior grid points,
/// with `y''` rebuilt by 5-point central differences (spacing `delta`) from
/// an independent tight-tolerance re-solve through the stencil points.
pub fn ode_residual(
    v: &PotentialSpec,
    sol: &VectorSolution,
    forcing: Option<Forcing>,
    delta: f64,
) -> Result<f64> {
    let tight = IntegratorSettings {
        rtol: 1e-13,
        atol: 1e-15,
        ..IntegratorSettings::default()
    };
    let breaks = v.breakpoints();
    let lo = sol.grid[0] + 2.0 * delta;
    let hi = sol.grid[sol.grid.len() - 1] - 2.0 * delta;
    let centers: Vec<f64> = sol
        .grid
        .iter()
        .copied()
        .filter(|&x| x >= lo && x <= hi && breaks.iter().all(|b| (b - x).abs() > 2.5 * delta))
        .collect();
    if centers.is_empty() {
        return Ok(0.0);
    }
    let mut pts: Vec<f64> = centers
        .iter()
        .flat_map(|&x| (-2..=2).map(move |j| x + j as f64 * delta))
        .chain(std::iter::once(sol.x0))
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let i0 = index_of(&sol.grid, sol.x0).ok_or(SpectralError::GridMissingInitialPoint { x0: sol.x0 })?;
    let fine = solve_vector_ivp(v, sol.z, sol.x0, &sol.y[i0], &sol.y_prime[i0], forcing, &pts, &tight)?;
    let at = |x: f64| -> &CVec {
        let k = pts.partition_point(|&p| p < x - 1e-12 * x.abs().max(1.0));
        &fine.y[k]
    };
    let vscale = 1.0 + sol.z.norm() + v.norm_bound();
    let mut worst: f64 = 0.0;
    for &x in &centers {
        let ypp = (-at(x + 2.0 * delta) + at(x + delta) * c(16.0, 0.0) - at(x) * c(30.0, 0.0)
            + at(x - delta) * c(16.0, 0.0)
            - at(x - 2.0 * delta))
            / c(12.0 * delta * delta, 0.0);
        let y = at(x);
        let mut r = -ypp + v.value(x) * y - y * sol.z;
        if let Some(f) = forcing {
            r -= f(x);
        }
        worst = worst.max(r.norm() / (vscale * y.norm().max(1.0)));
    }
    Ok(worst)
}

/// Inverse of a block with a condition estimate; used for the numerical
/// (rather than claimed) inverse in diagnostics.
pub fn numeric_block_inverse(pair: &FundamentalPair, k: usize) -> Option<(CMat, f64)> {
    inverse_with_condition(&pair.block(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matfun::{matrix_fn_complex, principal_sqrt, HermitianMatrix};
    use crate::quad::linspace;
    use proptest::prelude::*;

    fn s() -> IntegratorSettings {
        IntegratorSettings::default()
    }

    fn e(n: usize, k: usize) -> CVec {
        let mut v = CVec::zeros(n);
        v[k] = c(1.0, 0.0);
        v
    }

    #[test]
    fn trivial_free_solutions() {
        let v = PotentialSpec::free(2);
        let grid = linspace(-2.0, 3.0, 11);
        let a = solve_vector_ivp(&v, c(0.0, 0.0), 0.0, &e(2, 0), &CVec::zeros(2), None, &grid, &s()).unwrap();
        let b = solve_vector_ivp(&v, c(0.0, 0.0), 0.0, &CVec::zeros(2), &e(2, 1), None, &grid, &s()).unwrap();
        let l = solve_vector_ivp(&v, c(0.0, 0.0), 0.0, &CVec::zeros(2), &e(2, 0), None, &grid, &s()).unwrap();
        for (k, &x) in grid.iter().enumerate() {
            assert!((&a.y[k] - e(2, 0)).norm() < 1e-12);
            assert!((&b.y[k] - e(2, 1) * c(x, 0.0)).norm() < 1e-11);
        }
        assert!(wronskian_vector(&a, &b).unwrap().iter().all(|w| w.norm() < 1e-12));
        let w = wronskian_vector(&a, &l).unwrap();
        assert!(w.iter().all(|w| (w - c(1.0, 0.0)).norm() < 1e-11));
    }

    #[test]
    fn cosh_closed_form() {
        let v = PotentialSpec::free(1);
        let grid = linspace(-5.0, 5.0, 41);
        let sol = solve_vector_ivp(&v, c(-1.0, 0.0), 0.0, &e(1, 0), &CVec::zeros(1), None, &grid, &s()).unwrap();
        for (k, &x) in grid.iter().enumerate() {
            assert!((sol.y[k][0] - c(x.cosh(), 0.0)).norm() < 1e-8, "x={x}");
        }
        assert!(ode_residual(&v, &sol, None, 1e-3).unwrap() < 1e-6);
    }

    #[test]
    fn grid_errors() {
        let v = PotentialSpec::free(1).with_domain(0.0, 1.0);
        let r = solve_vector_ivp(&v, c(0.0, 1.0), 0.0, &e(1, 0), &e(1, 0), None, &[0.0, 2.0], &s());
        assert!(matches!(r, Err(SpectralError::GridOutsideDomain { .. })));
        let r = solve_vector_ivp(&v, c(0.0, 1.0), 0.5, &e(1, 0), &e(1, 0), None, &[0.0, 1.0], &s());
        assert!(matches!(r, Err(SpectralError::GridMissingInitialPoint { .. })));
    }

    #[test]
    fn constant_potential_cosine_oracle() {
        let v0 = HermitianMatrix::from_real(&[vec![1.0, 0.5], vec![0.5, -2.0]]).unwrap();
        let v = PotentialSpec::constant(v0.clone());
        let z = c(0.3, 0.7);
        let grid = linspace(0.0, 2.0, 9);
        let sol = solve_operator_ivp(&v, z, 0.0, &CMat::identity(2, 2), &CMat::zeros(2, 2), &grid, &s()).unwrap();
        // cos(sqrt(z - V0) x) via the eigenbasis of V0
        for (k, &x) in grid.iter().enumerate() {
            let oracle = matrix_fn_complex(&v0, |l| (principal_sqrt(z - l) * x).cos());
            assert!((&sol.y[k] - oracle).norm() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn coupled_channel_decouples() {
        let cpl = 0.8;
        let v = PotentialSpec::coupled_channel(2, cpl, vec![0.0, 0.0]).unwrap();
        let z = c(1.0, 0.5);
        let grid = linspace(0.0, 3.0, 7);
        let fp = fundamental_system(&v, z, 0.0, &BoundaryCondition::dirichlet(2), &grid, &s()).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let rot = CMat::from_row_slice(2, 2, &[c(r, 0.0), c(-r, 0.0), c(r, 0.0), c(r, 0.0)]);
        for (k, &x) in grid.iter().enumerate() {
            // eigenvalues of the coupling: +c on (1,1)/sqrt2, -c on (1,-1)/sqrt2
            let d = CMat::from_diagonal(&CVec::from_vec(vec![
                (principal_sqrt(z - cpl) * x).cos(),
                (principal_sqrt(z + cpl) * x).cos(),
            ]));
            let oracle = &rot * d * rot.transpose();
            assert!((&fp.theta[k] - oracle).norm() < 1e-8);
        }
    }

    #[test]
    fn free_dirichlet_closed_form() {
        let v = PotentialSpec::free(2);
        let z = c(2.0, 1.0);
        let grid = linspace(0.0, 4.0, 17);
        let fp = fundamental_system(&v, z, 0.0, &BoundaryCondition::dirichlet(2), &grid, &s()).unwrap();
        let k = principal_sqrt(z);
        for (i, &x) in grid.iter().enumerate() {
            let th = (k * x).cos();
            let ph = (k * x).sin() / k;
            assert!((&fp.theta[i] - CMat::identity(2, 2) * th).norm() < 1e-8);
            assert!((&fp.phi[i] - CMat::identity(2, 2) * ph).norm() < 1e-8);
        }
    }

    #[test]
    fn block_inverse_exact_at_x0() {
        let v = PotentialSpec::coupled_channel(2, 0.3, vec![1.0, -1.0]).unwrap();
        let alpha = HermitianMatrix::from_real(&[vec![0.4, 0.2], vec![0.2, -0.3]]).unwrap();
        let bc = BoundaryCondition::new(alpha).unwrap();
        let z = c(0.5, 2.0);
        let grid = [0.0];
        let p = fundamental_system(&v, z, 0.0, &bc, &grid, &s()).unwrap();
        let q = fundamental_system(&v, z.conj(), 0.0, &bc, &grid, &s()).unwrap();
        let r = identity_block_residual(&p, &q).unwrap();
        assert!(r.max_raw < 1e-14);
    }

    #[test]
    fn wronskian_identities_along_grid() {
        let v = PotentialSpec::wells(
            2,
            vec![
                SquareWell { channel: 0, depth: 5.0, center: 1.0, width: 1.0 },
                SquareWell { channel: 1, depth: 2.0, center: 2.0, width: 0.5 },
            ],
        )
        .unwrap();
        let alpha = HermitianMatrix::from_real(&[vec![0.3, 0.1], vec![0.1, 1.0]]).unwrap();
        let bc = BoundaryCondition::new(alpha).unwrap();
        let grid = linspace(-1.0, 4.0, 51);
        let rep = verify_fundamental_system(&v, c(1.5, 0.8), 0.5, &bc, &grid, &s()).unwrap();
        assert!(rep.passes(&Tolerances::default()), "{rep:?}");
    }

    #[test]
    fn operator_wronskian_theta_phi_is_identity() {
        let v = PotentialSpec::coupled_channel(2, 0.6, vec![0.0, 1.0]).unwrap();
        let bc = BoundaryCondition::new(HermitianMatrix::diagonal(&[0.2, -0.7])).unwrap();
        let z = c(-0.4, 1.1);
        let grid = linspace(0.0, 3.0, 31);
        let p = fundamental_system(&v, z, 0.0, &bc, &grid, &s()).unwrap();
        let q = fundamental_system(&v, z.conj(), 0.0, &bc, &grid, &s()).unwrap();
        let w = wronskian_operator(&q.theta_solution().adjoint(), &p.phi_solution()).unwrap();
        let w0 = wronskian_operator(&q.theta_solution().adjoint(), &p.theta_solution()).unwrap();
        for k in 0..grid.len() {
            assert!((&w[k] - CMat::identity(2, 2)).norm() < 1e-8);
            assert!(w0[k].norm() < 1e-8);
        }
    }

    #[test]
    fn scalar_cos_sin_wronskian() {
        let v = PotentialSpec::free(1);
        let grid = linspace(0.0, 6.0, 13);
        let fp = fundamental_system(&v, c(1.0, 0.0), 0.0, &BoundaryCondition::dirichlet(1), &grid, &s()).unwrap();
        let w = wronskian_operator(&fp.theta_solution(), &fp.phi_solution()).unwrap();
        assert!(w.iter().all(|m| (m[(0, 0)] - c(1.0, 0.0)).norm() < 1e-9));
    }

    #[test]
    fn real_solution_has_zero_self_wronskian() {
        let v = PotentialSpec::wells(1, vec![SquareWell { channel: 0, depth: 3.0, center: 0.0, width: 1.0 }]).unwrap();
        let grid = linspace(-2.0, 2.0, 21);
        let sol = solve_vector_ivp(&v, c(0.7, 0.0), 0.0, &e(1, 0), &e(1, 0), None, &grid, &s()).unwrap();
        let w = wronskian_vector(&sol, &sol).unwrap();
        assert!(w.iter().all(|w| w.norm() < 1e-12));
    }

    #[test]
    fn green_identity_holds() {
        let v = PotentialSpec::coupled_channel(2, 0.4, vec![0.5, 0.0]).unwrap();
        let bc = BoundaryCondition::dirichlet(2);
        let grid = linspace(0.0, 2.0, 401);
        let r = green_identity_residual(&v, c(1.0, 1.0), c(-0.5, 0.3), 0.0, &bc, &grid, &s()).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn column_equivalence() {
        let v = PotentialSpec::coupled_channel(2, 0.9, vec![0.0, 0.3]).unwrap();
        let z = c(0.2, -0.4);
        let grid = linspace(-1.0, 2.0, 13);
        let y0 = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 1.0), c(0.0, -2.0), c(0.3, 0.0)]);
        let y1 = CMat::from_row_slice(2, 2, &[c(0.0, 1.0), c(1.0, 0.0), c(0.2, 0.0), c(-1.0, 0.5)]);
        let m = solve_operator_ivp(&v, z, 0.0, &y0, &y1, &grid, &s()).unwrap();
        for j in 0..2 {
            let col = solve_vector_ivp(&v, z, 0.0, &y0.column(j).into_owned(), &y1.column(j).into_owned(), None, &grid, &s())
                .unwrap();
            let mc = m.column(j);
            for k in 0..grid.len() {
                assert!((&col.y[k] - &mc.y[k]).norm() < 1e-10 * (1.0 + col.y[k].norm()));
            }
        }
    }

    #[test]
    fn forced_solution_residual() {
        let v = PotentialSpec::wells(1, vec![SquareWell { channel: 0, depth: 2.0, center: 1.0, width: 1.0 }]).unwrap();
        let f = |x: f64| CVec::from_vec(vec![c(x.sin(), 0.5)]);
        let grid = linspace(0.0, 3.0, 31);
        let sol = solve_vector_ivp(&v, c(0.5, 1.0), 0.0, &e(1, 0), &CVec::zeros(1), Some(&f), &grid, &s()).unwrap();
        assert!(ode_residual(&v, &sol, Some(&f), 1e-3).unwrap() < 1e-6);
    }

    #[test]
    fn entire_in_z_cauchy_riemann() {
        let v = PotentialSpec::coupled_channel(2, 0.5, vec![0.0, 1.0]).unwrap();
        let bc = BoundaryCondition::dirichlet(2);
        let z = c(0.7, 0.4);
        let h = 1e-4;
        let th = |z: Complex64| fundamental_at(&v, z, 0.0, &bc, 2.0, &s()).unwrap().0;
        let dx = (th(z + h) - th(z - h)) / c(2.0 * h, 0.0);
        let dy = (th(z + c(0.0, h)) - th(z - c(0.0, h))) / c(0.0, 2.0 * h);
        assert!((dx - dy).norm() < 1e-5);
    }

    #[test]
    fn continuity_in_data_ratio_is_stable() {
        let v = PotentialSpec::coupled_channel(2, 0.5, vec![0.0, 1.0]).unwrap();
        let grid = linspace(0.0, 2.0, 11);
        let z = c(0.3, 0.2);
        let h0 = e(2, 0);
        let h1 = e(2, 1);
        let base = solve_vector_ivp(&v, z, 0.0, &h0, &h1, None, &grid, &s()).unwrap();
        let ratio = |d: f64| {
            let p = solve_vector_ivp(&v, z, 0.0, &(&h0 + e(2, 1) * c(d, 0.0)), &h1, None, &grid, &s()).unwrap();
            let diff = (0..grid.len()).map(|k| (&p.y[k] - &base.y[k]).norm()).fold(0.0, f64::max);
            diff / d
        };
        let r: Vec<f64> = [1e-3, 1e-4, 1e-5].iter().map(|&d| ratio(d)).collect();
        let (lo, hi) = r.iter().fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(hi / lo < 2.0, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn solve_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, zi in 0.1f64..2.0) {
            let v = PotentialSpec::coupled_channel(2, 0.7, vec![0.2, -0.1]).unwrap();
            let z = c(0.5, zi);
            let grid = linspace(-1.0, 1.5, 6);
            let f = |x: f64| CVec::from_vec(vec![c(x, 0.0), c(0.0, 1.0)]);
            let g = |x: f64| CVec::from_vec(vec![c(1.0, 0.0), c(x * x, 0.0)]);
            let fg = |x: f64| f(x) * c(a, 0.0) + g(x) * c(b, 0.0);
            let h = |k: usize| e(2, k);
            let s1 = solve_vector_ivp(&v, z, 0.0, &h(0), &h(1), Some(&f), &grid, &s()).unwrap();
            let s2 = solve_vector_ivp(&v, z, 0.0, &h(1), &h(0), Some(&g), &grid, &s()).unwrap();
            let h0 = h(0) * c(a, 0.0) + h(1) * c(b, 0.0);
            let h1 = h(1) * c(a, 0.0) + h(0) * c(b, 0.0);
            let s12 = solve_vector_ivp(&v, z, 0.0, &h0, &h1, Some(&fg), &grid, &s()).unwrap();
            for k in 0..grid.len() {
                let comb = &s1.y[k] * c(a, 0.0) + &s2.y[k] * c(b, 0.0);
                prop_assert!((&s12.y[k] - comb).norm() <= 1e-10 * (1.0 + s12.y[k].norm()) * 10.0);
            }
        }
    }
}
