//! Eigenfunction expansion: the transform `h -> h^(lambda) = int Phi(lambda, x)^* h(x) dx`
//! onto the model space of a spectral measure, its inverse, and the
//! functional calculus it diagonalizes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{ExecMode, IntegratorSettings};
use crate::error::{Result, SpectralError};
use crate::herglotz::{MatrixMeasure, MeasureJson};
use crate::ivp::{solve_operator_ivp, PotentialSpec};
use crate::matfun::{c, eig_of_hermitian, BoundaryCondition, CMat, CVec, I};
use crate::par::{map_indexed, try_map_indexed};
use crate::quad::{grid_weights, GaussLegendre};


/// Real-`lambda` solutions whose columns span the expansion: `phi` on a
/// half-line, `[theta phi]` on the full line.
pub trait SpectralBasis: Sync {
    /// Number of components of the functions being expanded.
    fn dim(&self) -> usize;
    /// Number of components of the transform.
    fn width(&self) -> usize;
    /// `Phi(lambda, x)` (`dim x width`) at each grid point.
    fn sample(&self, lambda: f64, grid: &[f64]) -> Result<Vec<CMat>>;
}

/// `phi_alpha(lambda, x, a)` of a right half-line.
#[derive(Debug, Clone)]
pub struct HalfLineBasis {
    pub potential: PotentialSpec,
    pub a: f64,
    pub bc: BoundaryCondition,
    pub settings: IntegratorSettings,
}

impl HalfLineBasis {
    pub fn new(potential: PotentialSpec, a: f64, bc: BoundaryCondition) -> Self {
        Self {
            potential,
            a,
            bc,
            settings: IntegratorSettings::default(),
        }
    }
}

/// Runs an initial value problem from `x0` on `grid`, inserting `x0` when absent.
pub(crate) fn solve_on_grid(
    v: &PotentialSpec,
    z: Complex64,
    x0: f64,
    y0: &CMat,
    y1: &CMat,
    grid: &[f64],
    settings: &IntegratorSettings,
) -> Result<Vec<CMat>> {
    let pos = grid.partition_point(|&x| x < x0);
    let present = grid.get(pos).is_some_and(|&x| x == x0);
    if present {
        return Ok(solve_operator_ivp(v, z, x0, y0, y1, grid, settings)?.y);
    }
    let mut g = grid.to_vec();
    g.insert(pos, x0);
    let mut y = solve_operator_ivp(v, z, x0, y0, y1, &g, settings)?.y;
    y.remove(pos);
    Ok(y)
}

impl SpectralBasis for HalfLineBasis {
    fn dim(&self) -> usize {
        self.potential.dim()
    }
    fn width(&self) -> usize {
        self.potential.dim()
    }
    fn sample(&self, lambda: f64, grid: &[f64]) -> Result<Vec<CMat>> {
        if grid.first().is_some_and(|&x| x < self.a) {
            return Err(SpectralError::InvalidInput("half-line grid starts left of the endpoint".into()));
        }
        let y0 = -self.bc.sin();
        let y1 = self.bc.cos().clone();
        solve_on_grid(&self.potential, c(lambda, 0.0), self.a, &y0, &y1, grid, &self.settings)
    }
}

/// Where the expanded function was sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

/// A transform together with its measure: one sample per cell (at the cell
/// midpoint) and one per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformResult {
    pub measure: MatrixMeasure,
    pub lambdas: Vec<f64>,
    pub values: Vec<CVec>,
    pub atom_values: Vec<CVec>,
    pub source: SourceGrid,
}

/// A step function on a partition plus values at atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpaceElement {
    pub breakpoints: Vec<f64>,
    pub cells: Vec<CVec>,
    pub atoms: Vec<(f64, CVec)>,
}

impl ModelSpaceElement {
    /// `chi_{(l1, l2]} e`.
    pub fn indicator(breakpoints: Vec<f64>, l1: f64, l2: f64, e: CVec) -> Self {
        let cells = breakpoints
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                if mid > l1 && mid <= l2 {
                    e.clone()
                } else {
                    CVec::zeros(e.len())
                }
            })
            .collect();
        Self {
            breakpoints,
            cells,
            atoms: Vec::new(),
        }
    }

    /// Value on the measure cell `(a, b]`, requiring that cell to sit inside one of ours.
    fn value_on(&self, a: f64, b: f64) -> Option<&CVec> {
        let k = self.breakpoints.partition_point(|&x| x <= a).checked_sub(1)?;
        let hi = *self.breakpoints.get(k + 1)?;
        let tol = 1e-12 * b.abs().max(1.0);
        if b <= hi + tol {
            self.cells.get(k)
        } else {
            None
        }
    }

    fn atom_value(&self, lambda: f64) -> Option<&CVec> {
        self.atoms
            .iter()
            .find(|(l, _)| (l - lambda).abs() <= 1e-12 * lambda.abs().max(1.0))
            .map(|(_, v)| v)
    }
}

impl From<&TransformResult> for ModelSpaceElement {
    fn from(t: &TransformResult) -> Self {
        Self {
            breakpoints: t.measure.breakpoints.clone(),
            cells: t.values.clone(),
            atoms: t
                .measure
                .point_masses
                .iter()
                .zip(&t.atom_values)
                .map(|(p, v)| (p.lambda, v.clone()))
                .collect(),
        }
    }
}

/// `sum_cells (u, Omega v) + sum_atoms (u, Omega v)`, antilinear in `u`.
/// The measure partition must refine both step functions.
pub fn model_inner_product(u: &ModelSpaceElement, v: &ModelSpaceElement, measure: &MatrixMeasure) -> Result<Complex64> {
    let mut acc = c(0.0, 0.0);
    for k in 0..measure.cells() {
        let m = &measure.cell_mass[k];
        if m.iter().all(|x| *x == c(0.0, 0.0)) {
            continue;
        }
        let (a, b) = measure.cell(k);
        let uk = u.value_on(a, b).ok_or(SpectralError::PartitionMismatch)?;
        let vk = v.value_on(a, b).ok_or(SpectralError::PartitionMismatch)?;
        if uk.len() != measure.dim || vk.len() != measure.dim {
            return Err(SpectralError::DimensionMismatch {
                expected: measure.dim,
                found: uk.len().min(vk.len()),
            });
        }
        acc += uk.dotc(&(m * vk));
    }
    for p in &measure.point_masses {
        let (Some(uk), Some(vk)) = (u.atom_value(p.lambda), v.atom_value(p.lambda)) else {
            return Err(SpectralError::PartitionMismatch);
        };
        acc += uk.dotc(&(&p.mass * vk));
    }
    Ok(acc)
}

/// `||h||^2` in the model space.
pub fn transform_norm_squared(t: &TransformResult) -> Result<f64> {
    let e = ModelSpaceElement::from(t);
    Ok(model_inner_product(&e, &e, &t.measure)?.re)
}

fn check_signal(basis_dim: usize, grid: &[f64], h: &[CVec]) -> Result<()> {
    if grid.len() != h.len() {
        return Err(SpectralError::GridMismatch);
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SpectralError::InvalidInput("signal grid must be strictly increasing with >= 2 points".into()));
    }
    if let Some(bad) = h.iter().find(|x| x.len() != basis_dim) {
        return Err(SpectralError::DimensionMismatch {
            expected: basis_dim,
            found: bad.len(),
        });
    }
    Ok(())
}

fn project(basis: &dyn SpectralBasis, lambda: f64, grid: &[f64], w: &[f64], h: &[CVec]) -> Result<CVec> {
    let phi = basis.sample(lambda, grid)?;
    let mut acc = CVec::zeros(basis.width());
    for k in 0..grid.len() {
        acc += phi[k].adjoint() * &h[k] * c(w[k], 0.0);
    }
    Ok(acc)
}

/// Forward transform against an assembled measure. Cells without mass get
/// a zero sample since the model space does not see them.
pub fn forward_transform(
    basis: &dyn SpectralBasis,
    grid: &[f64],
    h: &[CVec],
    measure: &MatrixMeasure,
    exec: ExecMode,
) -> Result<TransformResult> {
    check_signal(basis.dim(), grid, h)?;
    if measure.dim != basis.width() {
        return Err(SpectralError::DimensionMismatch {
            expected: basis.width(),
            found: measure.dim,
        });
    }
    let w = grid_weights(grid);
    let zero = h.iter().all(|x| x.iter().all(|v| *v == c(0.0, 0.0)));
    let m = basis.width();
    let lambdas: Vec<f64> = (0..measure.cells())
        .map(|k| {
            let (a, b) = measure.cell(k);
            0.5 * (a + b)
        })
        .collect();
    let values = try_map_indexed(exec, lambdas.len(), |k| {
        if zero || measure.cell_mass[k].iter().all(|x| *x == c(0.0, 0.0)) {
            Ok(CVec::zeros(m))
        } else {
            project(basis, lambdas[k], grid, &w, h)
        }
    })?;
    let atom_values = try_map_indexed(exec, measure.point_masses.len(), |k| {
        if zero {
            Ok(CVec::zeros(m))
        } else {
            project(basis, measure.point_masses[k].lambda, grid, &w, h)
        }
    })?;
    Ok(TransformResult {
        measure: measure.clone(),
        lambdas,
        values,
        atom_values,
        source: SourceGrid {
            x_min: grid[0],
            x_max: grid[grid.len() - 1],
            points: grid.len(),
        },
    })
}

/// `h(x) = sum_cells Phi(lambda_k, x) Omega_k h^_k + atoms` on `x_grid`.
pub fn inverse_transform(
    t: &TransformResult,
    basis: &dyn SpectralBasis,
    x_grid: &[f64],
    exec: ExecMode,
) -> Result<Vec<CVec>> {
    let n = basis.dim();
    if t.measure.dim != basis.width() {
        return Err(SpectralError::DimensionMismatch {
            expected: basis.width(),
            found: t.measure.dim,
        });
    }
    if x_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SpectralError::InvalidInput("grid must be strictly increasing".into()));
    }
    // (lambda, Omega h^) for every term with a nonzero contribution
    let mut terms: Vec<(f64, CVec)> = Vec::new();
    for k in 0..t.measure.cells() {
        let g = &t.measure.cell_mass[k] * &t.values[k];
        if g.iter().any(|x| *x != c(0.0, 0.0)) {
            terms.push((t.lambdas[k], g));
        }
    }
    for (p, v) in t.measure.point_masses.iter().zip(&t.atom_values) {
        let g = &p.mass * v;
        if g.iter().any(|x| *x != c(0.0, 0.0)) {
            terms.push((p.lambda, g));
        }
    }
    let chunks = 64.min(terms.len().max(1));
    let per = terms.len().div_ceil(chunks);
    let partial = try_map_indexed(exec, chunks, |ch| -> Result<Vec<CVec>> {
        let mut acc = vec![CVec::zeros(n); x_grid.len()];
        for (lambda, g) in terms.iter().skip(ch * per).take(per) {
            let phi = basis.sample(*lambda, x_grid)?;
            for (a, p) in acc.iter_mut().zip(&phi) {
                *a += p * g;
            }
        }
        Ok(acc)
    })?;
    let mut out = vec![CVec::zeros(n); x_grid.len()];
    for p in partial {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    Ok(out)
}

/// Multiplication by `F(lambda)` in the model space, i.e. `F(H)`.
pub fn apply_function_of_h<F: Fn(f64) -> Complex64>(t: &TransformResult, f: F) -> TransformResult {
    let mut out = t.clone();
    for (v, &l) in out.values.iter_mut().zip(&t.lambdas) {
        *v *= f(l);
    }
    for (v, p) in out.atom_values.iter_mut().zip(&t.measure.point_masses) {
        *v *= f(p.lambda);
    }
    out
}

/// `E_H((l1, l2])` in the model space.
pub fn spectral_restriction(t: &TransformResult, l1: f64, l2: f64) -> TransformResult {
    apply_function_of_h(t, |l| if l > l1 && l <= l2 { c(1.0, 0.0) } else { c(0.0, 0.0) })
}

/// Union of cells with mass above `tol` plus atoms, merged into closed intervals.
pub fn support_and_spectrum(measure: &MatrixMeasure, tol: f64) -> Vec<(f64, f64)> {
    let mut pieces: Vec<(f64, f64)> = Vec::new();
    for k in 0..measure.cells() {
        if measure.cell_mass[k].norm() > tol {
            pieces.push(measure.cell(k));
        }
    }
    for p in &measure.point_masses {
        if p.mass.norm() > tol {
            pieces.push((p.lambda, p.lambda));
        }
    }
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in pieces {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    merged
}

/// Largest number of eigenvalues above `tol` in any cell or atom mass.
pub fn max_multiplicity(measure: &MatrixMeasure, tol: f64) -> usize {
    measure
        .cell_mass
        .iter()
        .chain(measure.point_masses.iter().map(|p| &p.mass))
        .map(|m| eig_of_hermitian(m).values.iter().filter(|&&v| v > tol).count())
        .max()
        .unwrap_or(0)
}

/// `int |h|^2` with the same weights as the transform quadrature.
pub fn l2_norm_squared(grid: &[f64], h: &[CVec]) -> f64 {
    grid_weights(grid).iter().zip(h).map(|(w, v)| w * v.norm_squared()).sum()
}

/// Relative `L^2` distance `||a - b|| / ||b||` on a grid.
pub fn relative_l2_error(grid: &[f64], a: &[CVec], b: &[CVec]) -> f64 {
    let d: Vec<CVec> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    (l2_norm_squared(grid, &d) / l2_norm_squared(grid, b).max(f64::MIN_POSITIVE)).sqrt()
}

/// `int_0^1 e^{iut} dt` and `int_0^1 t e^{iut} dt`.
fn filon_moments(u: f64) -> (Complex64, Complex64) {
    if u.abs() < 1e-2 {
        let u2 = u * u;
        return (
            c(1.0 - u2 / 6.0, u / 2.0 - u * u2 / 24.0),
            c(0.5 - u2 / 8.0, u / 3.0 - u * u2 / 30.0),
        );
    }
    let e = c(0.0, u).exp();
    let a = (e - 1.0) / c(0.0, u);
    let b = e / c(0.0, u) + (e - 1.0) / (u * u);
    (a, b)
}

/// `int h_lin(x) e^{i k (x - a)} dx` for the piecewise-linear interpolant of one component.
fn filon(grid: &[f64], a: f64, h: &[Complex64], k: f64) -> Complex64 {
    let mut acc = c(0.0, 0.0);
    for i in 0..grid.len() - 1 {
        let d = grid[i + 1] - grid[i];
        let (ma, mb) = filon_moments(k * d);
        acc += c(0.0, k * (grid[i] - a)).exp() * d * (h[i] * ma + (h[i + 1] - h[i]) * mb);
    }
    acc
}

/// Model-space mass of `h` above `lambda_max`, estimated with the free
/// (`V = 0`) transform and density of the same boundary condition, which the
/// true ones approach for `lambda >> ||V||`. The transform integrals are
/// exact for the piecewise-linear interpolant of `h`, and the part beyond the
/// last wavenumber is extrapolated as `C / k^2`.
pub fn free_tail_estimate(bc: &BoundaryCondition, a: f64, grid: &[f64], h: &[CVec], lambda_max: f64) -> Result<f64> {
    let n = bc.dim();
    check_signal(n, grid, h)?;
    let e = eig_of_hermitian(bc.alpha.as_matrix());
    // rotate into the alpha eigenbasis, where everything is diagonal
    let ut = e.vectors.adjoint();
    let channels: Vec<Vec<Complex64>> = (0..n)
        .map(|j| h.iter().map(|v| (&ut * v)[j]).collect())
        .collect();
    let k0 = lambda_max.max(0.0).sqrt();
    let span = (grid[grid.len() - 1] - a).abs().max(1e-3);
    let k1 = (50.0 * k0).max(2e3 / span.min(1.0)).max(k0 + 1.0);
    let panel = (std::f64::consts::PI / span).min(1.0);
    let panels = ((k1 - k0) / panel).ceil() as usize;
    let gl = GaussLegendre::new(16);
    let integrand = |k: f64| -> f64 {
        let mut s = 0.0;
        for (j, &al) in e.values.iter().enumerate() {
            let (sa, ca) = al.sin_cos();
            let ep = filon(grid, a, &channels[j], k);
            let em = filon(grid, a, &channels[j], -k);
            let cosp = (ep + em) * 0.5;
            let sinp = (ep - em) / c(0.0, 2.0);
            // phi = -sin a cos(k s) + cos a sin(k s) / k is real
            let hat = cosp * (-sa) + sinp * (ca / k);
            // density of m = (cos a ik - sin a)/(sin a ik + cos a) at lambda = k^2
            let m = (I * k * ca - sa) / (I * k * sa + ca);
            s += 2.0 * k * m.im / std::f64::consts::PI * hat.norm_sqr();
        }
        s
    };
    let per_panel: Vec<(f64, f64)> = map_indexed(ExecMode::default(), panels, |p| {
        let lo = k0 + p as f64 * panel;
        let hi = (lo + panel).min(k1);
        let mut s = 0.0;
        let mut s2 = 0.0;
        for (k, wk) in gl.on_interval(lo, hi) {
            let g = integrand(k);
            s += wk * g;
            s2 += wk * g * k * k;
        }
        (s, s2)
    });
    let total: f64 = per_panel.iter().map(|p| p.0).sum();
    let last = (panels / 10).max(1);
    let width = (k1 - (k0 + (panels - last) as f64 * panel)).max(f64::MIN_POSITIVE);
    let ck2 = per_panel[panels - last..].iter().map(|p| p.1).sum::<f64>() / width;
    Ok(total + ck2 / k1)
}

/// Row-major `[re, im]` entries.
pub type JsonVector = Vec<[f64; 2]>;

fn vec_to_json(v: &CVec) -> JsonVector {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn vec_from_json(v: &JsonVector) -> CVec {
    CVec::from_iterator(v.len(), v.iter().map(|p| c(p[0], p[1])))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformJson {
    measure: MeasureJson,
    lambdas: Vec<f64>,
    values: Vec<JsonVector>,
    atom_values: Vec<JsonVector>,
    source: SourceGrid,
}

impl TransformResult {
    pub fn to_json(&self) -> Result<String> {
        let j = TransformJson {
            measure: MeasureJson::from(&self.measure),
            lambdas: self.lambdas.clone(),
            values: self.values.iter().map(vec_to_json).collect(),
            atom_values: self.atom_values.iter().map(vec_to_json).collect(),
            source: self.source.clone(),
        };
        serde_json::to_string_pretty(&j).map_err(|e| SpectralError::InvalidInput(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: TransformJson = serde_json::from_str(s).map_err(|e| SpectralError::InvalidInput(e.to_string()))?;
        let measure = MatrixMeasure::try_from(j.measure)?;
        if j.values.len() != measure.cells() || j.lambdas.len() != measure.cells() {
            return Err(SpectralError::PartitionMismatch);
        }
        if j.atom_values.len() != measure.point_masses.len() {
            return Err(SpectralError::PartitionMismatch);
        }
        Ok(Self {
            measure,
            lambdas: j.lambdas,
            values: j.values.iter().map(vec_from_json).collect(),
            atom_values: j.atom_values.iter().map(vec_from_json).collect(),
            source: j.source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halfline::WeylFunction;
    use crate::herglotz::{assemble_measure, uniform_partition, AssemblyOptions, PointMass};
    use crate::quad::linspace;
    use std::f64::consts::PI;

    fn free_dirichlet() -> HalfLineBasis {
        HalfLineBasis::new(PotentialSpec::free(1), 0.0, BoundaryCondition::dirichlet(1))
    }

    fn scalar_signal(grid: &[f64], f: impl Fn(f64) -> f64) -> Vec<CVec> {
        grid.iter().map(|&x| CVec::from_element(1, c(f(x), 0.0))).collect()
    }

    fn free_measure(lo: f64, hi: f64, cells: usize) -> MatrixMeasure {
        let w = WeylFunction::new(PotentialSpec::free(1), 0.0, BoundaryCondition::dirichlet(1)).unwrap();
        assemble_measure(&w, &uniform_partition(lo, hi, cells), &AssemblyOptions::default()).unwrap()
    }

    #[test]
    fn indicator_transform_closed_form() {
        let grid = linspace(0.0, 1.0, 2001);
        let h = scalar_signal(&grid, |_| 1.0);
        let b = free_dirichlet();
        let w = grid_weights(&grid);
        for lambda in [0.5, 3.0, 17.0, 120.0] {
            let got = project(&b, lambda, &grid, &w, &h).unwrap()[0];
            let want = (1.0 - lambda.sqrt().cos()) / lambda;
            assert!((got - c(want, 0.0)).norm() < 1e-8, "{lambda}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_and_linearity() {
        let meas = free_measure(0.0, 20.0, 40);
        let grid = linspace(0.0, 2.0, 401);
        let b = free_dirichlet();
        let z = forward_transform(&b, &grid, &vec![CVec::zeros(1); grid.len()], &meas, ExecMode::Sequential).unwrap();
        assert!(z.values.iter().all(|v| v.norm() == 0.0));
        assert!(inverse_transform(&z, &b, &grid, ExecMode::Sequential).unwrap().iter().all(|v| v.norm() == 0.0));
        let f = scalar_signal(&grid, |x| x.sin());
        let g = scalar_signal(&grid, |x| x * x);
        let fg: Vec<CVec> = f.iter().zip(&g).map(|(a, b)| a * c(2.0, 0.0) + b * c(0.0, -1.0)).collect();
        let tf = forward_transform(&b, &grid, &f, &meas, ExecMode::Sequential).unwrap();
        let tg = forward_transform(&b, &grid, &g, &meas, ExecMode::Sequential).unwrap();
        let tfg = forward_transform(&b, &grid, &fg, &meas, ExecMode::Sequential).unwrap();
        for k in 0..meas.cells() {
            let lin = &tf.values[k] * c(2.0, 0.0) + &tg.values[k] * c(0.0, -1.0);
            assert!((lin - &tfg.values[k]).norm() < 1e-10 * (1.0 + tfg.values[k].norm()));
        }
    }

    #[test]
    fn inner_product_of_indicators() {
        let mut meas = free_measure(0.0, 4.0, 8);
        meas.point_masses.push(PointMass {
            lambda: -1.0,
            mass: CMat::from_element(1, 1, c(0.25, 0.0)),
        });
        let e = CVec::from_element(1, c(1.0, 0.0));
        let mut u = ModelSpaceElement::indicator(vec![0.0, 1.0, 4.0], 1.0, 4.0, e.clone());
        let got = model_inner_product(&u, &u, &meas);
        // atom value missing
        assert_eq!(got, Err(SpectralError::PartitionMismatch));
        u.atoms.push((-1.0, CVec::zeros(1)));
        let got = model_inner_product(&u, &u, &meas).unwrap();
        let want = meas.mass_between(1.0, 4.0)[(0, 0)];
        assert!((got - want).norm() < 1e-14);
        // a partition the measure does not refine
        let bad = ModelSpaceElement::indicator(vec![0.0, 1.25, 4.0], 1.25, 4.0, e);
        assert_eq!(model_inner_product(&bad, &bad, &meas), Err(SpectralError::PartitionMismatch));
        assert_eq!(model_inner_product(&u, &u, &MatrixMeasure::empty(1)).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn parseval_indicator_with_tail() {
        let meas = free_measure(0.0, 200.0, 2000);
        let grid = linspace(0.0, 1.0, 1001);
        let h = scalar_signal(&grid, |_| 1.0);
        let b = free_dirichlet();
        let t = forward_transform(&b, &grid, &h, &meas, ExecMode::default()).unwrap();
        let inside = transform_norm_squared(&t).unwrap();
        let tail = free_tail_estimate(&b.bc, 0.0, &grid, &h, 200.0).unwrap();
        assert!((inside + tail - 1.0).abs() < 2e-3, "{inside} + {tail}");
        // polarization
        let g = scalar_signal(&grid, |x| x);
        let tg = forward_transform(&b, &grid, &g, &meas, ExecMode::default()).unwrap();
        let (eu, ev) = (ModelSpaceElement::from(&t), ModelSpaceElement::from(&tg));
        let direct = model_inner_product(&eu, &ev, &meas).unwrap();
        let comb = |s: Complex64| {
            let w = ModelSpaceElement {
                breakpoints: eu.breakpoints.clone(),
                cells: eu.cells.iter().zip(&ev.cells).map(|(a, b)| a + b * s).collect(),
                atoms: Vec::new(),
            };
            model_inner_product(&w, &w, &meas).unwrap().re
        };
        let pol = (comb(c(1.0, 0.0)) - comb(c(-1.0, 0.0)) - I * comb(I) + I * comb(-I)) / 4.0;
        assert!((pol - direct).norm() < 1e-8);
    }

    #[test]
    fn support_of_free_measure() {
        let meas = free_measure(-5.0, 30.0, 70);
        // smoothing leaks ~1e-4 into the cell below 0; true masses there are ~0.1
        let s = support_and_spectrum(&meas, 1e-3);
        assert_eq!(s.len(), 1);
        assert!(s[0].0.abs() < 1e-12 && s[0].1 == 30.0, "{s:?}");
        assert_eq!(max_multiplicity(&meas, 1e-9), 1);
        let lower = meas.mass_between(-5.0, 0.0);
        assert!(lower.norm() < 1e-3);
    }

    #[test]
    fn functional_calculus_basics() {
        let meas = free_measure(0.0, 10.0, 20);
        let grid = linspace(1.0, 2.0, 101);
        let h = scalar_signal(&grid, |x| (PI * (x - 1.0)).sin());
        let t = forward_transform(&free_dirichlet(), &grid, &h, &meas, ExecMode::Sequential).unwrap();
        assert_eq!(apply_function_of_h(&t, |_| c(1.0, 0.0)), t);
        let r = spectral_restriction(&t, 2.0, 5.0);
        let ind = apply_function_of_h(&t, |l| c(f64::from(u8::from(l > 2.0 && l <= 5.0)), 0.0));
        assert_eq!(r, ind);
    }

    #[test]
    fn transform_json_round_trip() {
        let meas = free_measure(0.0, 5.0, 5);
        let grid = linspace(0.0, 1.0, 11);
        let h = scalar_signal(&grid, |x| x.cos());
        let t = forward_transform(&free_dirichlet(), &grid, &h, &meas, ExecMode::Sequential).unwrap();
        let s = t.to_json().unwrap();
        let back = TransformResult::from_json(&s).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json().unwrap(), s);
    }

    #[test]
    fn dimension_checks() {
        let meas = free_measure(0.0, 5.0, 5);
        let grid = linspace(0.0, 1.0, 11);
        let bad = vec![CVec::zeros(2); grid.len()];
        assert!(forward_transform(&free_dirichlet(), &grid, &bad, &meas, ExecMode::Sequential).is_err());
        assert!(forward_transform(&free_dirichlet(), &grid[1..], &bad, &meas, ExecMode::Sequential).is_err());
    }
}
