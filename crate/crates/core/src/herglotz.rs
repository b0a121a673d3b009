//! Matrix-valued Herglotz functions: Stieltjes inversion, point masses,
//! Nevanlinna representation and the measures they produce.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::ExecMode;
use crate::error::{Result, SpectralError};
use crate::halfline::WeylFunction;
use crate::matfun::{c, eig_of_hermitian, hermitian_part, imag_part, min_eigenvalue, psd_project, CMat, I};
use crate::par::try_map_indexed;
use crate::quad::GaussLegendre;

/// An analytic `n x n` matrix function on the upper half-plane.
pub trait MatrixFunction: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, z: Complex64) -> Result<CMat>;
}

/// Adapter turning a closure into a [`MatrixFunction`].
pub struct FnMatrix<F> {
    dim: usize,
    f: F,
}

impl<F> FnMatrix<F>
where
    F: Fn(Complex64) -> CMat + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> MatrixFunction for FnMatrix<F>
where
    F: Fn(Complex64) -> CMat + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, z: Complex64) -> Result<CMat> {
        Ok((self.f)(z))
    }
}

/// Scalar function as a 1 x 1 matrix function.
pub fn scalar<F>(f: F) -> FnMatrix<impl Fn(Complex64) -> CMat + Sync>
where
    F: Fn(Complex64) -> Complex64 + Sync,
{
    FnMatrix::new(1, move |z| CMat::from_element(1, 1, f(z)))
}

impl MatrixFunction for WeylFunction {
    fn dim(&self) -> usize {
        WeylFunction::dim(self)
    }
    fn eval(&self, z: Complex64) -> Result<CMat> {
        Ok(self.compute(z)?.m)
    }
}

impl<T: MatrixFunction + ?Sized> MatrixFunction for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, z: Complex64) -> Result<CMat> {
        (**self).eval(z)
    }
}

/// Distances from the real axis used for Stieltjes inversion. For a cell of
/// width `w` level `k` uses `min(eps[k], relative[k] * w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsSchedule {
    pub eps: Vec<f64>,
    pub relative: Vec<f64>,
    /// Richardson levels; `levels + 1` of the smallest distances are used.
    pub levels: usize,
}

impl Default for EpsSchedule {
    fn default() -> Self {
        Self {
            eps: vec![0.1, 0.05, 0.025, 0.0125],
            relative: vec![0.5, 0.25, 0.125, 0.0625],
            levels: 2,
        }
    }
}

impl EpsSchedule {
    /// Fixed distances, independent of the cell width.
    pub fn absolute(eps: Vec<f64>, levels: usize) -> Self {
        Self {
            eps,
            relative: Vec::new(),
            levels,
        }
    }

    pub fn for_width(&self, width: f64) -> Vec<f64> {
        self.eps
            .iter()
            .enumerate()
            .map(|(k, &e)| match self.relative.get(k) {
                Some(r) => e.min(r * width),
                None => e,
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.eps.is_empty() || self.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(SpectralError::InvalidInput("epsilon schedule must be nonempty and positive".into()));
        }
        if self.eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(SpectralError::InvalidInput("epsilon schedule must be decreasing".into()));
        }
        Ok(())
    }

    fn used(&self) -> usize {
        (self.levels + 1).min(self.eps.len())
    }
}

/// Neville extrapolation of `values[k]` sampled at `t[k]` to `t = 0`.
pub fn richardson(t: &[f64], values: &[CMat]) -> CMat {
    let mut p: Vec<CMat> = values.to_vec();
    let n = t.len();
    for k in 1..n {
        for i in (k..n).rev() {
            let a = t[i - k];
            let b = t[i];
            // P(0) from the pair (t_{i-k}, t_i)
            p[i] = (&p[i] * c(-a, 0.0) - &p[i - 1] * c(-b, 0.0)) / c(b - a, 0.0);
        }
    }
    p.pop().unwrap_or_else(|| CMat::zeros(0, 0))
}

fn check_sample(m: &CMat, z: Complex64) -> Result<CMat> {
    let im = imag_part(m);
    let lo = min_eigenvalue(&im);
    if lo < -1e-6 * m.norm().max(1.0) {
        return Err(SpectralError::NotHerglotz {
            min_eigenvalue: lo,
            re: z.re,
            im: z.im,
        });
    }
    Ok(im)
}

/// `pi^{-1} int Im M(lambda + i eps)` over `[l1, l2]` by Gauss-Legendre.
fn smeared_mass<M: MatrixFunction + ?Sized>(f: &M, gl: &GaussLegendre, l1: f64, l2: f64, eps: f64) -> Result<CMat> {
    let n = f.dim();
    let mut acc = CMat::zeros(n, n);
    for (x, w) in gl.on_interval(l1, l2) {
        let z = c(x, eps);
        let im = check_sample(&f.eval(z)?, z)?;
        acc += im * c(w, 0.0);
    }
    Ok(acc / c(std::f64::consts::PI, 0.0))
}

/// Extrapolated, not yet PSD-projected, mass of `(l1, l2]`.
fn raw_cell_mass<M: MatrixFunction + ?Sized>(
    f: &M,
    gl: &GaussLegendre,
    l1: f64,
    l2: f64,
    sched: &EpsSchedule,
) -> Result<CMat> {
    let eps = sched.for_width(l2 - l1);
    let k = sched.used();
    let tail = &eps[eps.len() - k..];
    let vals = tail
        .iter()
        .map(|&e| smeared_mass(f, gl, l1, l2, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(hermitian_part(&richardson(tail, &vals)))
}

/// Adaptive variant used for single intervals: bisects until 64-point rules on
/// the halves agree with the whole, so isolated poles are resolved.
fn adaptive_smeared<M: MatrixFunction + ?Sized>(
    f: &M,
    gl: &GaussLegendre,
    l1: f64,
    l2: f64,
    eps: f64,
    whole: CMat,
    depth: u32,
) -> Result<CMat> {
    let mid = 0.5 * (l1 + l2);
    let left = smeared_mass(f, gl, l1, mid, eps)?;
    let right = smeared_mass(f, gl, mid, l2, eps)?;
    let sum = &left + &right;
    let err = (&sum - &whole).norm();
    if depth == 0 || err <= 1e-11 * sum.norm().max(1e-3) {
        return Ok(sum);
    }
    Ok(adaptive_smeared(f, gl, l1, mid, eps, left, depth - 1)? + adaptive_smeared(f, gl, mid, l2, eps, right, depth - 1)?)
}

/// Stieltjes inversion of `M` over `(l1, l2]`, extrapolated in `eps` and
/// projected onto the PSD cone.
pub fn stieltjes_invert<M: MatrixFunction + ?Sized>(
    f: &M,
    l1: f64,
    l2: f64,
    sched: &EpsSchedule,
    quad_points: usize,
) -> Result<CMat> {
    if !(l2 > l1) {
        return Err(SpectralError::InvalidInput("need l1 < l2".into()));
    }
    sched.validate()?;
    let gl = GaussLegendre::new(quad_points.max(2));
    let eps = sched.for_width(l2 - l1);
    let k = sched.used();
    let tail = &eps[eps.len() - k..];
    let vals = tail
        .iter()
        .map(|&e| {
            let whole = smeared_mass(f, &gl, l1, l2, e)?;
            adaptive_smeared(f, &gl, l1, l2, e, whole, 14)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(psd_project(&hermitian_part(&richardson(tail, &vals))).0)
}

/// Result of [`point_mass`].
#[derive(Debug, Clone, PartialEq)]
pub struct PointMassReport {
    pub mass: CMat,
    /// Extrapolated `|| eps Re M(lambda + i eps) ||`, which should vanish.
    pub real_part_residual: f64,
    pub flagged: bool,
}

/// Default distances for atom extraction, scaled by `max(1, |lambda|)`.
pub fn default_point_schedule() -> Vec<f64> {
    vec![1e-4, 5e-5, 2.5e-5, 1.25e-5]
}

/// `lim eps Im M(lambda + i eps)`, extrapolated on `schedule`.
pub fn point_mass<M: MatrixFunction + ?Sized>(f: &M, lambda: f64, schedule: &[f64]) -> Result<PointMassReport> {
    if schedule.is_empty() {
        return Err(SpectralError::InvalidInput("empty epsilon schedule".into()));
    }
    let mut ims = Vec::with_capacity(schedule.len());
    let mut res = Vec::with_capacity(schedule.len());
    for &e in schedule {
        let z = c(lambda, e);
        let m = f.eval(z)?;
        let im = check_sample(&m, z)?;
        ims.push(im * c(e, 0.0));
        res.push(hermitian_part(&m) * c(e, 0.0));
    }
    let mass = psd_project(&hermitian_part(&richardson(schedule, &ims))).0;
    let re = richardson(schedule, &res).norm();
    Ok(PointMassReport {
        mass,
        real_part_residual: re,
        flagged: re > 1e-4,
    })
}

/// `D = lim M(i eta) / (i eta)`, extrapolated in `1 / eta`.
pub fn asymptotic_linear_term<M: MatrixFunction + ?Sized>(f: &M, etas: &[f64]) -> Result<CMat> {
    if etas.is_empty() {
        return Err(SpectralError::InvalidInput("empty eta schedule".into()));
    }
    let mut t = Vec::new();
    let mut vals = Vec::new();
    for &eta in etas {
        let z = c(0.0, eta);
        let m = f.eval(z)?;
        check_sample(&m, z)?;
        t.push(1.0 / eta);
        vals.push(m / (I * eta));
    }
    let d = hermitian_part(&richardson(&t, &vals));
    let lo = min_eigenvalue(&d);
    if lo < -1e-6 * d.norm().max(1.0) {
        return Err(SpectralError::NotHerglotz {
            min_eigenvalue: lo,
            re: 0.0,
            im: *etas.last().unwrap(),
        });
    }
    Ok(psd_project(&d).0)
}

pub fn default_eta_schedule() -> Vec<f64> {
    vec![1e6, 2e6, 4e6, 8e6]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub lambda: f64,
    pub mass: CMat,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureMetadata {
    pub eps_schedule: Vec<f64>,
    pub relative_schedule: Vec<f64>,
    pub extrapolation_order: usize,
    pub quad_points: usize,
    /// Most negative eigenvalue removed by PSD projection.
    pub clipped: f64,
}

/// A nonnegative matrix-valued measure: PSD masses on the half-open cells
/// `(b_k, b_{k+1}]` plus point masses.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixMeasure {
    pub dim: usize,
    pub breakpoints: Vec<f64>,
    pub cell_mass: Vec<CMat>,
    pub point_masses: Vec<PointMass>,
    pub metadata: MeasureMetadata,
    /// Set for full-line measures on `H^2` (value `2n`).
    pub block: Option<usize>,
}

impl MatrixMeasure {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            breakpoints: Vec::new(),
            cell_mass: Vec::new(),
            point_masses: Vec::new(),
            metadata: MeasureMetadata::default(),
            block: None,
        }
    }

    pub fn cells(&self) -> usize {
        self.cell_mass.len()
    }

    pub fn cell(&self, k: usize) -> (f64, f64) {
        (self.breakpoints[k], self.breakpoints[k + 1])
    }

    /// Index of the cell `(b_k, b_{k+1}]` containing `lambda`.
    pub fn cell_of(&self, lambda: f64) -> Option<usize> {
        if self.cells() == 0 || lambda <= self.breakpoints[0] || lambda > self.breakpoints[self.cells()] {
            return None;
        }
        Some(self.breakpoints.partition_point(|&b| b < lambda) - 1)
    }

    /// Cell masses plus atoms.
    pub fn total(&self) -> CMat {
        let mut t = CMat::zeros(self.dim, self.dim);
        for m in &self.cell_mass {
            t += m;
        }
        for p in &self.point_masses {
            t += &p.mass;
        }
        t
    }

    /// Mass of the union of cells in `(l1, l2]` plus atoms there; `l1`, `l2`
    /// must be breakpoints for the cell part to be exact.
    pub fn mass_between(&self, l1: f64, l2: f64) -> CMat {
        let mut t = CMat::zeros(self.dim, self.dim);
        for k in 0..self.cells() {
            let (a, b) = self.cell(k);
            let mid = 0.5 * (a + b);
            if mid > l1 && mid <= l2 {
                t += &self.cell_mass[k];
            }
        }
        for p in &self.point_masses {
            if p.lambda > l1 && p.lambda <= l2 {
                t += &p.mass;
            }
        }
        t
    }

    /// Merges cell `k` with cell `k + 1`.
    pub fn merge(&mut self, k: usize) -> Result<()> {
        if k + 1 >= self.cells() {
            return Err(SpectralError::PartitionMismatch);
        }
        let next = self.cell_mass.remove(k + 1);
        self.cell_mass[k] += next;
        self.breakpoints.remove(k + 1);
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.cell_mass
            .iter()
            .chain(self.point_masses.iter().map(|p| &p.mass))
            .map(min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn control(&self) -> ControlMeasure<'_> {
        ControlMeasure::new(self)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&MeasureJson::from(self)).map_err(|e| SpectralError::InvalidInput(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: MeasureJson = serde_json::from_str(s).map_err(|e| SpectralError::InvalidInput(e.to_string()))?;
        j.try_into()
    }
}

/// Row-major `[re, im]` rows.
pub type JsonMatrix = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_json(m: &CMat) -> JsonMatrix {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn matrix_from_json(rows: &JsonMatrix) -> Result<CMat> {
    let r = rows.len();
    let cols = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|row| row.len() != cols) {
        return Err(SpectralError::InvalidInput("ragged matrix".into()));
    }
    Ok(CMat::from_fn(r, cols, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointMassJson {
    lambda: f64,
    mass: JsonMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct MeasureJson {
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block: Option<usize>,
    breakpoints: Vec<f64>,
    cells: Vec<JsonMatrix>,
    point_masses: Vec<PointMassJson>,
    metadata: MeasureMetadata,
}

impl From<&MatrixMeasure> for MeasureJson {
    fn from(m: &MatrixMeasure) -> Self {
        Self {
            dim: m.dim,
            block: m.block,
            breakpoints: m.breakpoints.clone(),
            cells: m.cell_mass.iter().map(matrix_to_json).collect(),
            point_masses: m
                .point_masses
                .iter()
                .map(|p| PointMassJson {
                    lambda: p.lambda,
                    mass: matrix_to_json(&p.mass),
                })
                .collect(),
            metadata: m.metadata.clone(),
        }
    }
}

impl TryFrom<MeasureJson> for MatrixMeasure {
    type Error = SpectralError;
    fn try_from(j: MeasureJson) -> Result<Self> {
        let cell_mass = j.cells.iter().map(matrix_from_json).collect::<Result<Vec<_>>>()?;
        if !cell_mass.is_empty() && j.breakpoints.len() != cell_mass.len() + 1 {
            return Err(SpectralError::PartitionMismatch);
        }
        if j.breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectralError::InvalidInput("breakpoints must increase".into()));
        }
        let point_masses = j
            .point_masses
            .iter()
            .map(|p| {
                Ok(PointMass {
                    lambda: p.lambda,
                    mass: matrix_from_json(&p.mass)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for m in cell_mass.iter().chain(point_masses.iter().map(|p| &p.mass)) {
            if m.nrows() != j.dim || m.ncols() != j.dim {
                return Err(SpectralError::DimensionMismatch {
                    expected: j.dim,
                    found: m.nrows(),
                });
            }
        }
        Ok(Self {
            dim: j.dim,
            breakpoints: j.breakpoints,
            cell_mass,
            point_masses,
            metadata: j.metadata,
            block: j.block,
        })
    }
}

/// Scalar measure `mu = sum_j 2^{-(j+1)} (e_j, Omega e_j)` with the null sets of `Omega`.
#[derive(Debug, Clone)]
pub struct ControlMeasure<'a> {
    pub measure: &'a MatrixMeasure,
    pub weights: Vec<f64>,
}

impl<'a> ControlMeasure<'a> {
    pub fn new(measure: &'a MatrixMeasure) -> Self {
        let weights = (0..measure.dim).map(|j| 0.5f64.powi(j as i32 + 1)).collect();
        Self { measure, weights }
    }

    fn apply(&self, m: &CMat) -> f64 {
        self.weights.iter().enumerate().map(|(j, w)| w * m[(j, j)].re).sum()
    }

    pub fn cell_values(&self) -> Vec<f64> {
        self.measure.cell_mass.iter().map(|m| self.apply(m)).collect()
    }

    pub fn atom_values(&self) -> Vec<f64> {
        self.measure.point_masses.iter().map(|p| self.apply(&p.mass)).collect()
    }

    /// True when `mu(cell) <= tol` exactly where `||Omega(cell)|| <= tol'` on every cell,
    /// with `tol'` scaled by the smallest weight.
    pub fn null_sets_agree(&self, tol: f64) -> bool {
        let wmin = self.weights.last().copied().unwrap_or(1.0);
        let agree = |m: &CMat, mu: f64| {
            let big = m.norm() > tol;
            let mu_big = mu > tol * wmin * 0.5;
            big == mu_big || (m.norm() - tol).abs() < tol
        };
        self.measure
            .cell_mass
            .iter()
            .zip(self.cell_values())
            .all(|(m, mu)| agree(m, mu))
            && self
                .measure
                .point_masses
                .iter()
                .zip(self.atom_values())
                .all(|(p, mu)| agree(&p.mass, mu))
    }
}

/// Evenly spaced breakpoints.
pub fn uniform_partition(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    crate::quad::linspace(lo, hi, cells.max(1) + 1)
}

/// Breakpoints uniform in `sign(l - center) sqrt|l - center|`, refining
/// quadratically toward `center`, which is always a breakpoint when inside.
pub fn sqrt_graded_partition(lo: f64, hi: f64, cells: usize, center: f64) -> Vec<f64> {
    let cells = cells.max(1);
    let a = (center - lo).max(0.0).sqrt();
    let b = (hi - center).max(0.0).sqrt();
    if a == 0.0 || b == 0.0 {
        let (s, e, sg) = if a == 0.0 { (0.0, b, 1.0) } else { (-a, 0.0, 1.0) };
        let mut k = crate::quad::linspace(s, e, cells + 1);
        for v in k.iter_mut() {
            *v = center + sg * v.signum() * *v * *v;
        }
        if a == 0.0 {
            k[0] = lo;
        } else {
            k[cells] = hi.min(center);
        }
        k[0] = k[0].max(lo);
        return k;
    }
    let neg = ((cells as f64) * a / (a + b)).round().clamp(1.0, cells as f64 - 1.0) as usize;
    let pos = cells - neg;
    let mut k = crate::quad::linspace(-a, 0.0, neg + 1);
    k.extend(crate::quad::linspace(0.0, b, pos + 1).into_iter().skip(1));
    let mut out: Vec<f64> = k.into_iter().map(|t| center + t.signum() * t * t).collect();
    out[0] = lo;
    out[cells] = hi;
    out
}

/// Controls for [`assemble_measure`].
#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyOptions {
    pub schedule: EpsSchedule,
    pub quad_points: usize,
    pub detect_atoms: bool,
    /// Atoms with trace weight below this are ignored.
    pub min_atom_weight: f64,
    pub exec: ExecMode,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            schedule: EpsSchedule::default(),
            quad_points: 64,
            detect_atoms: true,
            min_atom_weight: 1e-6,
            exec: ExecMode::default(),
        }
    }
}

fn trace_im<M: MatrixFunction + ?Sized>(f: &M, z: Complex64) -> Result<f64> {
    Ok(imag_part(&f.eval(z)?).trace().re)
}

/// Golden-section maximizer of `g` on `[lo, hi]`.
fn golden_max<G: FnMut(f64) -> Result<f64>>(mut g: G, mut lo: f64, mut hi: f64, iters: usize) -> Result<f64> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = g(x1)?;
    let mut f2 = g(x2)?;
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = g(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = g(x1)?;
        }
    }
    Ok(if f1 > f2 { x1 } else { x2 })
}

/// Locates a pole of `M` on the real axis inside `[lo, hi]` by following the
/// peak of `tr Im M(lambda + i eta)` while shrinking `eta`; returns the
/// location when the peak behaves like an atom.
pub fn locate_atom<M: MatrixFunction + ?Sized>(f: &M, lo: f64, hi: f64, min_weight: f64) -> Result<Option<f64>> {
    let mut a = lo;
    let mut b = hi;
    let mut eta = 0.25 * (hi - lo);
    let mut x = 0.5 * (a + b);
    let floor = 1e-7 * x.abs().max(1.0);
    while eta > floor {
        x = golden_max(|l| trace_im(f, c(l, eta)), a, b, 24)?;
        a = (x - 5.0 * eta).max(lo);
        b = (x + 5.0 * eta).min(hi);
        eta *= 0.1;
    }
    x = golden_max(|l| trace_im(f, c(l, floor)), a, b, 30)?;
    let s = x.abs().max(1.0);
    let (e1, e2) = (1e-5 * s, 1e-6 * s);
    let q1 = e1 * trace_im(f, c(x, e1))?;
    let q2 = e2 * trace_im(f, c(x, e2))?;
    if q2 >= 0.5 * q1 && q2 > min_weight && x > lo && x < hi {
        Ok(Some(x))
    } else {
        Ok(None)
    }
}

/// Assembles the measure of `M` on the given partition: one extrapolated
/// Stieltjes inversion per cell, then atom detection and removal of the
/// atoms' smeared contribution from nearby cells.
pub fn assemble_measure<M: MatrixFunction + ?Sized>(
    f: &M,
    breakpoints: &[f64],
    opts: &AssemblyOptions,
) -> Result<MatrixMeasure> {
    let n = f.dim();
    let sched = &opts.schedule;
    sched.validate()?;
    if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SpectralError::InvalidInput("partition must be strictly increasing".into()));
    }
    let metadata = MeasureMetadata {
        eps_schedule: sched.eps.clone(),
        relative_schedule: sched.relative.clone(),
        extrapolation_order: sched.levels,
        quad_points: opts.quad_points,
        clipped: 0.0,
    };
    if breakpoints.len() < 2 {
        return Ok(MatrixMeasure {
            metadata,
            ..MatrixMeasure::empty(n)
        });
    }
    let gl = GaussLegendre::new(opts.quad_points.max(2));
    let cells = breakpoints.len() - 1;
    let mut raw = try_map_indexed(opts.exec, cells, |k| {
        raw_cell_mass(f, &gl, breakpoints[k], breakpoints[k + 1], sched)
    })?;

    let mut atoms = Vec::new();
    if opts.detect_atoms {
        let width = |k: usize| breakpoints[k + 1] - breakpoints[k];
        let dens: Vec<f64> = (0..cells).map(|k| raw[k].trace().re / width(k)).collect();
        let mut candidates = Vec::new();
        for k in 0..cells {
            let left = if k > 0 { dens[k - 1] } else { f64::NEG_INFINITY };
            let right = if k + 1 < cells { dens[k + 1] } else { f64::NEG_INFINITY };
            let far = [k.checked_sub(2).map(|j| dens[j]), dens.get(k + 2).copied()]
                .into_iter()
                .flatten()
                .fold(0.0f64, f64::max);
            if dens[k] >= left && dens[k] > right && raw[k].trace().re > opts.min_atom_weight && dens[k] > 1.5 * far {
                candidates.push(k);
            }
        }
        let found = try_map_indexed(opts.exec, candidates.len(), |i| {
            let k = candidates[i];
            let lo = breakpoints[k.saturating_sub(1)];
            let hi = breakpoints[(k + 2).min(cells)];
            locate_atom(f, lo, hi, opts.min_atom_weight)
        })?;
        let mut located: Vec<f64> = found.into_iter().flatten().collect();
        located.sort_by(f64::total_cmp);
        located.dedup_by(|a, b| (*a - *b).abs() <= 1e-6 * b.abs().max(1.0));
        for lambda in located {
            let s = lambda.abs().max(1.0);
            let sch: Vec<f64> = default_point_schedule().iter().map(|e| e * s).collect();
            let pm = point_mass(f, lambda, &sch)?;
            if pm.mass.trace().re <= opts.min_atom_weight {
                continue;
            }
            // remove the atom's smeared share computed with the identical rule
            let w = pm.mass.clone();
            let model = FnMatrix::new(n, move |z: Complex64| &w / (c(lambda, 0.0) - z));
            let home = breakpoints.partition_point(|&b| b < lambda).saturating_sub(1).min(cells - 1);
            let from = home.saturating_sub(3);
            let to = (home + 3).min(cells - 1);
            for k in from..=to {
                let sub = raw_cell_mass(&model, &gl, breakpoints[k], breakpoints[k + 1], sched)?;
                raw[k] -= sub;
            }
            atoms.push(PointMass { lambda, mass: pm.mass });
        }
    }

    let mut clipped: f64 = 0.0;
    let cell_mass = raw
        .into_iter()
        .map(|m| {
            let (p, worst) = psd_project(&m);
            clipped = clipped.min(worst);
            p
        })
        .collect();
    Ok(MatrixMeasure {
        dim: n,
        breakpoints: breakpoints.to_vec(),
        cell_mass,
        point_masses: atoms,
        metadata: MeasureMetadata { clipped, ..metadata },
        block: None,
    })
}

/// `C + D z + int dOmega(l) [(l - z)^{-1} - l / (1 + l^2)]` with cell-midpoint quadrature.
pub fn nevanlinna_reconstruct(measure: &MatrixMeasure, cc: &CMat, d: &CMat, z: Complex64) -> CMat {
    let kern = |l: f64| (c(l, 0.0) - z).inv() - c(l / (1.0 + l * l), 0.0);
    let mut out = cc + d * z;
    for k in 0..measure.cells() {
        let (a, b) = measure.cell(k);
        let mid = 0.5 * (a + b);
        out += &measure.cell_mass[k] * kern(mid);
    }
    for p in &measure.point_masses {
        out += &p.mass * kern(p.lambda);
    }
    out
}

/// Worst `||M(z) - reconstruction||` over the test points.
pub fn nevanlinna_residual<M: MatrixFunction + ?Sized>(
    f: &M,
    measure: &MatrixMeasure,
    cc: &CMat,
    d: &CMat,
    test_points: &[Complex64],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &z in test_points {
        let r = (f.eval(z)? - nevanlinna_reconstruct(measure, cc, d, z)).norm();
        worst = worst.max(r);
    }
    Ok(worst)
}

/// The constant term `C = Re M(i)` of the Nevanlinna representation.
pub fn nevanlinna_constant<M: MatrixFunction + ?Sized>(f: &M) -> Result<CMat> {
    Ok(hermitian_part(&f.eval(I)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelDecomposition {
    pub dim: usize,
    /// Orthogonal projector onto `ker Im M`.
    pub projector: CMat,
    /// Set when `Im M` vanishes identically, i.e. `M` is constant.
    pub constant_warning: bool,
}

/// Common kernel of `Im M(z)` over the samples.
pub fn herglotz_kernel_decomposition<M: MatrixFunction + ?Sized>(
    f: &M,
    z_samples: &[Complex64],
) -> Result<KernelDecomposition> {
    if z_samples.len() < 2 || z_samples.iter().any(|z| z.im <= 0.0) {
        return Err(SpectralError::InvalidInput("need at least two samples in the upper half-plane".into()));
    }
    let n = f.dim();
    let mut first: Option<(usize, CMat)> = None;
    for &z in z_samples {
        let im = check_sample(&f.eval(z)?, z)?;
        let e = eig_of_hermitian(&im);
        let scale = e.values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut p = CMat::zeros(n, n);
        let mut dim = 0;
        for (j, v) in e.values.iter().enumerate() {
            if *v < 1e-8 * scale {
                let col = e.vectors.column(j);
                p += col * col.adjoint();
                dim += 1;
            }
        }
        match &first {
            None => first = Some((dim, p)),
            Some((d0, p0)) => {
                if *d0 != dim {
                    return Err(SpectralError::KernelMismatch(format!("dimension {d0} vs {dim} at {z}")));
                }
                let diff = (p0 - &p).norm();
                if diff > 1e-6 {
                    return Err(SpectralError::KernelMismatch(format!("projectors differ by {diff:.3e} at {z}")));
                }
            }
        }
    }
    let (dim, projector) = first.expect("at least two samples");
    Ok(KernelDecomposition {
        dim,
        projector,
        constant_warning: dim == n,
    })
}
