//! Half-line Weyl-Titchmarsh function, Weyl solution, Green's function and
//! boundary-condition changes.

use std::collections::HashMap;
use std::sync::RwLock;

use num_complex::Complex64;

use crate::config::NumericConfig;
use crate::error::{Result, SpectralError};
use crate::ivp::{fundamental_system, propagate, transport, PotentialSpec};
use crate::matfun::{
    c, eig_of_hermitian, inverse_with_condition, norm1, principal_sqrt, thin_qr, vstack, BoundaryCondition, CMat,
    CVec, Eigen, I,
};
use crate::quad::GaussLegendre;

/// Which ray the half-line occupies relative to the endpoint `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `(a, +inf)`
    Right,
    /// `(-inf, a)`
    Left,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Right => 1.0,
            Side::Left => -1.0,
        }
    }
}

/// How the square-integrability condition at infinity is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Closure {
    /// Exact outgoing data where the potential is constant, else `DirichletCap`.
    #[default]
    Auto,
    /// `u(b) = 0`, `u'(b) = I` with the doubling schedule on `b`.
    DirichletCap,
    /// `u(b) = I`, `u'(b) = 0` with the doubling schedule on `b`.
    NeumannCap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    /// Initial distance `b - a`; `None` means `20 max(1, 1 / Im sqrt z)`.
    pub b_initial: Option<f64>,
    /// Largest allowed distance as a multiple of the initial one.
    pub max_doublings: u32,
    pub growth: f64,
    pub tol: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            b_initial: None,
            max_doublings: 10,
            growth: 2.0,
            tol: 1e-8,
        }
    }
}

/// An evaluated m-function value together with how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct MValue {
    pub m: CMat,
    /// Distance from `a` at which the decay condition was imposed; infinite
    /// for the exact closure.
    pub length: f64,
    /// Successive `||m_{2b} - m_b||` for the doubling schedule.
    pub gaps: Vec<f64>,
}

fn key(z: Complex64) -> (u64, u64) {
    (z.re.to_bits(), z.im.to_bits())
}

/// The Weyl-Titchmarsh function of `-y'' + V y` on a half-line with a
/// self-adjoint boundary condition at `a`.
#[derive(Debug)]
pub struct WeylFunction {
    pub potential: PotentialSpec,
    pub a: f64,
    pub bc: BoundaryCondition,
    pub side: Side,
    pub truncation: Truncation,
    pub closure: Closure,
    pub config: NumericConfig,
    cache: RwLock<HashMap<(u64, u64), MValue>>,
}

impl Clone for WeylFunction {
    fn clone(&self) -> Self {
        Self {
            potential: self.potential.clone(),
            a: self.a,
            bc: self.bc.clone(),
            side: self.side,
            truncation: self.truncation,
            closure: self.closure,
            config: self.config,
            cache: RwLock::new(self.cache.read().map(|c| c.clone()).unwrap_or_default()),
        }
    }
}

/// Outgoing data of the constant tail `V_inf`: with `K = sqrt(z - V_inf)`
/// (`Im >= 0` per eigenvalue) the decaying solution is `exp(+-i K s)`.
struct TailData {
    start: f64,
    eig: Eigen,
    k: Vec<Complex64>,
}

impl TailData {
    fn new(w: &WeylFunction, z: Complex64) -> Option<Self> {
        let tail = match w.side {
            Side::Right => w.potential.right_tail(),
            Side::Left => w.potential.left_tail(),
        };
        let start = match w.side {
            Side::Right => tail.start.max(w.a),
            Side::Left => tail.start.min(w.a),
        };
        if !start.is_finite() {
            return None;
        }
        let eig = eig_of_hermitian(tail.value.as_matrix());
        let k = eig.values.iter().map(|&l| principal_sqrt(z - l)).collect();
        Some(Self { start, eig, k })
    }

    /// `(u, u')` at signed distance `s = sign (x - start) >= 0`.
    fn solution(&self, side: Side, x: f64) -> (CMat, CMat) {
        let sg = side.sign();
        let s = sg * (x - self.start);
        let u = self.eig.apply_complex(|j| (I * self.k[j] * s).exp());
        let up = self.eig.apply_complex(|j| I * self.k[j] * sg * (I * self.k[j] * s).exp());
        (u, up)
    }

    /// `int_0^inf u(s)^* u(s) ds` for the normal matrix `u`.
    fn gram(&self) -> CMat {
        self.eig.apply_complex(|j| c(0.5 / self.k[j].im, 0.0))
    }
}

impl WeylFunction {
    pub fn new(potential: PotentialSpec, a: f64, bc: BoundaryCondition) -> Result<Self> {
        Self::with_side(potential, a, bc, Side::Right)
    }

    pub fn with_side(potential: PotentialSpec, a: f64, bc: BoundaryCondition, side: Side) -> Result<Self> {
        if bc.dim() != potential.dim() {
            return Err(SpectralError::DimensionMismatch {
                expected: potential.dim(),
                found: bc.dim(),
            });
        }
        let (lo, hi) = potential.domain();
        let ok = match side {
            Side::Right => hi == f64::INFINITY && a >= lo,
            Side::Left => lo == f64::NEG_INFINITY && a <= hi,
        };
        if !ok || !a.is_finite() {
            return Err(SpectralError::GridOutsideDomain { x: a, lo, hi });
        }
        Ok(Self {
            potential,
            a,
            bc,
            side,
            truncation: Truncation::default(),
            closure: Closure::Auto,
            config: NumericConfig::default(),
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_closure(mut self, closure: Closure) -> Self {
        self.closure = closure;
        self.clear_cache();
        self
    }

    pub fn with_truncation(mut self, t: Truncation) -> Self {
        self.truncation = t;
        self.clear_cache();
        self
    }

    pub fn with_config(mut self, config: NumericConfig) -> Self {
        self.config = config;
        self.clear_cache();
        self
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn clear_cache(&self) {
        if let Ok(mut c) = self.cache.write() {
            c.clear();
        }
    }

    pub fn cached(&self, z: Complex64) -> Option<MValue> {
        self.cache.read().ok()?.get(&key(z)).cloned()
    }

    /// All cached `(z, m(z))` pairs.
    pub fn cache_entries(&self) -> Vec<(Complex64, CMat)> {
        self.cache
            .read()
            .map(|c| {
                c.iter()
                    .map(|(k, v)| (c_from_key(*k), v.m.clone()))
                    .collect()
            })
            .unwrap_or_default()
    }

    fn use_exact(&self, z: Complex64) -> Option<TailData> {
        match self.closure {
            Closure::Auto => TailData::new(self, z),
            _ => None,
        }
    }

    /// Boundary data `(cos a u'(a) - sin a u(a), sin a u'(a) + cos a u(a))`.
    fn boundary_pair(&self, u: &CMat, up: &CMat) -> (CMat, CMat) {
        let s = self.bc.sin();
        let co = self.bc.cos();
        (co * up - s * u, s * up + co * u)
    }

    fn m_from_boundary(&self, z: Complex64, u: &CMat, up: &CMat) -> Result<CMat> {
        // normalize the columns first so the condition test is scale free
        let (q, _) = thin_qr(&vstack(u, up));
        let n = self.dim();
        let qu = q.rows(0, n).into_owned();
        let qp = q.rows(n, n).into_owned();
        let (num, nrm) = self.boundary_pair(&qu, &qp);
        let (inv, cond) = inverse_with_condition(&nrm).ok_or(SpectralError::SingularNormalization {
            re: z.re,
            im: z.im,
            condition: f64::INFINITY,
        })?;
        let cond = if n == 1 { 1.0 / nrm[(0, 0)].norm().max(f64::MIN_POSITIVE) } else { cond.max(norm1(&inv)) };
        if cond > self.config.tol.cond_limit {
            return Err(SpectralError::SingularNormalization {
                re: z.re,
                im: z.im,
                condition: cond,
            });
        }
        Ok(num * inv)
    }

    /// `m_b(z)` with the decay condition replaced by a cap at distance `length`.
    pub fn m_capped(&self, z: Complex64, length: f64, neumann: bool) -> Result<CMat> {
        if z.im == 0.0 {
            return Err(SpectralError::RealSpectralParameter);
        }
        if !(length > 0.0) {
            return Err(SpectralError::InvalidInput("truncation point must lie beyond a".into()));
        }
        let n = self.dim();
        let b = self.a + self.side.sign() * length;
        let (u0, u1) = if neumann {
            (CMat::identity(n, n), CMat::zeros(n, n))
        } else {
            (CMat::zeros(n, n), CMat::identity(n, n))
        };
        let state = self.march(z, b, vstack(&u0, &u1))?;
        self.m_from_boundary(z, &state.rows(0, n).into_owned(), &state.rows(n, n).into_owned())
    }

    /// Transports `[u; u']` from `from` to `a` in chunks, keeping only the
    /// column space; `m` is invariant under right factors.
    fn march(&self, z: Complex64, from: f64, mut state: CMat) -> Result<CMat> {
        // growth per unit length is about Im sqrt(z - V); keep chunks below e^20
        let rate = principal_sqrt(z - self.potential.norm_bound()).im.max(principal_sqrt(z + self.potential.norm_bound()).im);
        let chunk = (20.0 / rate.max(1e-12)).min(1.0);
        let mut x = from;
        while (x - self.a).abs() > 1e-14 * x.abs().max(1.0) {
            let next = if (x - self.a).abs() > chunk { x - self.side.sign() * chunk } else { self.a };
            state = transport(&self.potential, z, x, state, next, &self.config.integrator)?;
            state = thin_qr(&state).0;
            x = next;
        }
        Ok(state)
    }

    fn m_exact(&self, z: Complex64, tail: &TailData) -> Result<CMat> {
        let (u, up) = tail.solution(self.side, tail.start);
        let state = vstack(&u, &up);
        let state = self.march(z, tail.start, state)?;
        let n = self.dim();
        self.m_from_boundary(z, &state.rows(0, n).into_owned(), &state.rows(n, n).into_owned())
    }

    fn initial_length(&self, z: Complex64) -> f64 {
        self.truncation
            .b_initial
            .unwrap_or_else(|| 20.0 * (1.0 / principal_sqrt(z).im).max(1.0))
    }

    fn m_doubling(&self, z: Complex64, neumann: bool) -> Result<MValue> {
        let t = &self.truncation;
        let mut len = self.initial_length(z);
        let max_len = len * t.growth.powi(t.max_doublings as i32);
        let mut prev = self.m_capped(z, len, neumann)?;
        let mut gaps = Vec::new();
        loop {
            let next_len = len * t.growth;
            if next_len > max_len * (1.0 + 1e-12) {
                return Err(SpectralError::TruncationNotConverged {
                    b_max: self.a + self.side.sign() * len,
                    gap: gaps.last().copied().unwrap_or(f64::INFINITY),
                });
            }
            let next = self.m_capped(z, next_len, neumann)?;
            let gap = (&next - &prev).norm();
            gaps.push(gap);
            if gap < t.tol {
                return Ok(MValue {
                    m: next,
                    length: next_len,
                    gaps,
                });
            }
            prev = next;
            len = next_len;
        }
    }

    /// Evaluates `m(z)` (cached).
    pub fn evaluate(&self, z: Complex64) -> Result<MValue> {
        if z.im == 0.0 {
            return Err(SpectralError::RealSpectralParameter);
        }
        if let Some(v) = self.cached(z) {
            return Ok(v);
        }
        let v = self.compute(z)?;
        if let Ok(mut c) = self.cache.write() {
            c.entry(key(z)).or_insert_with(|| v.clone());
        }
        Ok(v)
    }

    /// Evaluates `m(z)` without touching the cache; used by bulk sweeps.
    pub fn compute(&self, z: Complex64) -> Result<MValue> {
        if z.im == 0.0 {
            return Err(SpectralError::RealSpectralParameter);
        }
        Ok(match self.closure {
            Closure::NeumannCap => self.m_doubling(z, true)?,
            Closure::DirichletCap => self.m_doubling(z, false)?,
            Closure::Auto => match TailData::new(self, z) {
                Some(tail) => MValue {
                    m: self.m_exact(z, &tail)?,
                    length: f64::INFINITY,
                    gaps: Vec::new(),
                },
                None => self.m_doubling(z, false)?,
            },
        })
    }

    pub fn m(&self, z: Complex64) -> Result<CMat> {
        Ok(self.evaluate(z)?.m)
    }

    /// Decaying solution `u` on `points` (any order) together with the
    /// boundary normalization `N` so that `psi = u N^{-1}`.
    fn decaying_on(&self, z: Complex64, points: &[f64]) -> Result<(Vec<CMat>, Vec<CMat>, CMat)> {
        let n = self.dim();
        let sg = self.side.sign();
        for &x in points {
            if sg * (x - self.a) < -1e-12 * self.a.abs().max(1.0) {
                let (lo, hi) = self.potential.domain();
                return Err(SpectralError::GridOutsideDomain { x, lo, hi });
            }
        }
        let tail = self.use_exact(z);
        let (start, state0) = match &tail {
            Some(t) => {
                let (u, up) = t.solution(self.side, t.start);
                (t.start, vstack(&u, &up))
            }
            None => {
                let v = self.evaluate(z)?;
                // psi from theta + phi m, evaluated through its boundary values at a
                let co = self.bc.cos();
                let s = self.bc.sin();
                let u = co - s * &v.m;
                let up = s + co * &v.m;
                (self.a, vstack(&u, &up))
            }
        };
        // integrate the part between a and the tail start
        let inner: Vec<f64> = points
            .iter()
            .copied()
            .filter(|&x| tail.is_none() || sg * (x - start) <= 0.0)
            .chain([self.a, start])
            .collect();
        let mut grid = inner.clone();
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|p, q| (*p - *q).abs() <= 1e-12 * q.abs().max(1.0));
        let states = propagate(&self.potential, z, start, &state0, &grid, None, &self.config.integrator)?;
        let lookup = |x: f64| -> usize {
            grid.iter()
                .position(|&g| (g - x).abs() <= 1e-12 * x.abs().max(1.0))
                .expect("point present")
        };
        let ia = lookup(self.a);
        let ua = states[ia].rows(0, n).into_owned();
        let upa = states[ia].rows(n, n).into_owned();
        let (_, nrm) = self.boundary_pair(&ua, &upa);
        let mut u = Vec::with_capacity(points.len());
        let mut up = Vec::with_capacity(points.len());
        for &x in points {
            match &tail {
                Some(t) if sg * (x - start) > 0.0 => {
                    let (a, b) = t.solution(self.side, x);
                    u.push(a);
                    up.push(b);
                }
                _ => {
                    let st = &states[lookup(x)];
                    u.push(st.rows(0, n).into_owned());
                    up.push(st.rows(n, n).into_owned());
                }
            }
        }
        Ok((u, up, nrm))
    }

    /// `(psi, psi')` on `points`, normalized by `sin a psi'(a) + cos a psi(a) = I`.
    pub fn weyl_solution(&self, z: Complex64, points: &[f64]) -> Result<(Vec<CMat>, Vec<CMat>)> {
        if z.im == 0.0 {
            return Err(SpectralError::RealSpectralParameter);
        }
        let (u, up, nrm) = self.decaying_on(z, points)?;
        let (inv, _) = inverse_with_condition(&nrm).ok_or(SpectralError::SingularNormalization {
            re: z.re,
            im: z.im,
            condition: f64::INFINITY,
        })?;
        Ok((
            u.iter().map(|m| m * &inv).collect(),
            up.iter().map(|m| m * &inv).collect(),
        ))
    }

    /// `int psi(z)^* psi(z)` over the whole ray; `Im z` times this equals `Im m(z)`.
    pub fn weyl_gram(&self, z: Complex64) -> Result<CMat> {
        if z.im == 0.0 {
            return Err(SpectralError::RealSpectralParameter);
        }
        let tail = self.use_exact(z);
        let far = match &tail {
            Some(t) => t.start,
            None => self.a + self.side.sign() * self.evaluate(z)?.length.min(1e6),
        };
        let (lo, hi) = if far >= self.a { (self.a, far) } else { (far, self.a) };
        let kmax = principal_sqrt(z - self.potential.norm_bound()).norm().max(principal_sqrt(z).norm()) + 1.0;
        let panel = (0.5f64).min(2.0 / kmax);
        let mut cuts: Vec<f64> = self.potential.breakpoints().into_iter().filter(|&b| b > lo && b < hi).collect();
        cuts.insert(0, lo);
        cuts.push(hi);
        let gl = GaussLegendre::new(16);
        let mut pts = Vec::new();
        let mut wts = Vec::new();
        for w in cuts.windows(2) {
            let m = ((w[1] - w[0]) / panel).ceil().max(1.0) as usize;
            for p in 0..m {
                let x0 = w[0] + (w[1] - w[0]) * p as f64 / m as f64;
                let x1 = w[0] + (w[1] - w[0]) * (p + 1) as f64 / m as f64;
                for (x, wt) in gl.on_interval(x0, x1) {
                    pts.push(x);
                    wts.push(wt);
                }
            }
        }
        let n = self.dim();
        let mut gram = CMat::zeros(n, n);
        if !pts.is_empty() {
            let (psi, _) = self.weyl_solution(z, &pts)?;
            for (p, w) in psi.iter().zip(&wts) {
                gram += p.adjoint() * p * c(*w, 0.0);
            }
        }
        if let Some(t) = &tail {
            let (u, _, nrm) = self.decaying_on(z, &[t.start])?;
            let inv = inverse_with_condition(&nrm).map(|p| p.0).ok_or(SpectralError::SingularNormalization {
                re: z.re,
                im: z.im,
                condition: f64::INFINITY,
            })?;
            // beyond the tail start psi = exp(i K s) u(start) N^{-1}
            let scale = &u[0] * &inv;
            gram += scale.adjoint() * t.gram() * scale;
        }
        Ok(gram)
    }

    fn fundamental_on(&self, z: Complex64, points: &[f64]) -> Result<(Vec<CMat>, Vec<CMat>)> {
        let mut grid: Vec<f64> = points.iter().copied().chain([self.a]).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|p, q| (*p - *q).abs() <= 1e-12 * q.abs().max(1.0));
        let fp = fundamental_system(&self.potential, z, self.a, &self.bc, &grid, &self.config.integrator)?;
        let idx = |x: f64| {
            grid.iter()
                .position(|&g| (g - x).abs() <= 1e-12 * x.abs().max(1.0))
                .expect("point present")
        };
        Ok((
            points.iter().map(|&x| fp.phi[idx(x)].clone()).collect(),
            points.iter().map(|&x| fp.phi_prime[idx(x)].clone()).collect(),
        ))
    }

    /// Green's function `G(z, x, x')` of the half-line operator.
    pub fn greens_kernel(&self, z: Complex64, x: f64, xp: f64) -> Result<CMat> {
        if self.side != Side::Right {
            return Err(SpectralError::InvalidInput("Green's function is provided for right half-lines".into()));
        }
        if z.im == 0.0 {
            return Err(SpectralError::RealSpectralParameter);
        }
        if x <= xp {
            let (phi, _) = self.fundamental_on(z, &[x])?;
            let (psi, _) = self.weyl_solution(z.conj(), &[xp])?;
            Ok(&phi[0] * psi[0].adjoint())
        } else {
            let (psi, _) = self.weyl_solution(z, &[x])?;
            let (phi, _) = self.fundamental_on(z.conj(), &[xp])?;
            Ok(&psi[0] * phi[0].adjoint())
        }
    }

    /// `(H - z)^{-1} u` on an increasing grid starting at or after `a`;
    /// `u` is taken to vanish off the grid.
    pub fn resolvent_apply(&self, z: Complex64, grid: &[f64], u: &[CVec]) -> Result<Vec<CVec>> {
        if self.side != Side::Right {
            return Err(SpectralError::InvalidInput("resolvent is provided for right half-lines".into()));
        }
        if z.im == 0.0 {
            return Err(SpectralError::RealSpectralParameter);
        }
        if grid.len() != u.len() {
            return Err(SpectralError::GridMismatch);
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectralError::InvalidInput("grid must be strictly increasing".into()));
        }
        let (phi_z, _) = self.fundamental_on(z, grid)?;
        let (psi_z, _) = self.weyl_solution(z, grid)?;
        let (phi_c, _) = self.fundamental_on(z.conj(), grid)?;
        let (psi_c, _) = self.weyl_solution(z.conj(), grid)?;
        let left: Vec<CVec> = (0..grid.len()).map(|k| phi_c[k].adjoint() * &u[k]).collect();
        let right: Vec<CVec> = (0..grid.len()).map(|k| psi_c[k].adjoint() * &u[k]).collect();
        let cl = cumulative(grid, &left);
        let total_r = cumulative(grid, &right);
        let last = total_r.len() - 1;
        Ok((0..grid.len())
            .map(|k| &psi_z[k] * &cl[k] + &phi_z[k] * (&total_r[last] - &total_r[k]))
            .collect())
    }
}

fn c_from_key(k: (u64, u64)) -> Complex64 {
    c(f64::from_bits(k.0), f64::from_bits(k.1))
}

/// Running integral `int_{x_0}^{x_k} f` on an increasing grid with
/// third-order interval rules.
pub fn cumulative(x: &[f64], f: &[CVec]) -> Vec<CVec> {
    let n = x.len();
    let dim = f.first().map_or(0, |v| v.len());
    let mut out = vec![CVec::zeros(dim); n];
    for i in 0..n.saturating_sub(1) {
        let h = x[i + 1] - x[i];
        let inc = if n >= 3 {
            // quadratic through three neighbouring samples, integrated over [x_i, x_{i+1}]
            let (j0, j1, j2) = if i + 2 < n { (i, i + 1, i + 2) } else { (i - 1, i, i + 1) };
            let (a, b, cc) = (x[j0], x[j1], x[j2]);
            let w = |p: f64, q: f64, r: f64| {
                // int_{x_i}^{x_{i+1}} (t - q)(t - r) / ((p - q)(p - r)) dt
                let prim = |t: f64| t * t * t / 3.0 - (q + r) * t * t / 2.0 + q * r * t;
                (prim(x[i + 1]) - prim(x[i])) / ((p - q) * (p - r))
            };
            &f[j0] * c(w(a, b, cc), 0.0) + &f[j1] * c(w(b, a, cc), 0.0) + &f[j2] * c(w(cc, a, b), 0.0)
        } else {
            (&f[i] + &f[i + 1]) * c(0.5 * h, 0.0)
        };
        out[i + 1] = &out[i] + inc;
    }
    out
}

/// `m_b(z)` for an explicit Dirichlet cap at `b > a`.
pub fn m_truncated(v: &PotentialSpec, a: f64, bc: &BoundaryCondition, z: Complex64, b: f64) -> Result<CMat> {
    if !(b > a) {
        return Err(SpectralError::InvalidInput("b must exceed a".into()));
    }
    let w = WeylFunction::new(v.clone(), a, bc.clone())?.with_closure(Closure::DirichletCap);
    w.m_capped(z, b - a, false)
}

pub fn m_function(w: &WeylFunction, z: Complex64) -> Result<CMat> {
    w.m(z)
}

/// Sine/cosine blocks `(A, B, C, D)` of the change from `alpha` to `beta`.
pub fn lft_blocks(alpha: &BoundaryCondition, beta: &BoundaryCondition) -> (CMat, CMat, CMat, CMat) {
    let (sa, ca) = (alpha.sin(), alpha.cos());
    let (sb, cb) = (beta.sin(), beta.cos());
    (
        cb * ca + sb * sa,
        sb * ca - cb * sa,
        cb * sa - sb * ca,
        cb * ca + sb * sa,
    )
}

/// `m_beta = (C + D m_alpha)(A + B m_alpha)^{-1}`.
pub fn lft_boundary_change(m_alpha: &CMat, alpha: &BoundaryCondition, beta: &BoundaryCondition) -> Result<CMat> {
    lft_boundary_change_with_limit(m_alpha, alpha, beta, NumericConfig::default().tol.cond_limit)
}

pub fn lft_boundary_change_with_limit(
    m_alpha: &CMat,
    alpha: &BoundaryCondition,
    beta: &BoundaryCondition,
    cond_limit: f64,
) -> Result<CMat> {
    let (a, b, cc, d) = lft_blocks(alpha, beta);
    let pencil = a + b * m_alpha;
    let (inv, cond) = inverse_with_condition(&pencil).ok_or(SpectralError::SingularPencil {
        condition: f64::INFINITY,
    })?;
    let cond = if pencil.nrows() == 1 {
        norm1(&inv).max(1.0 / norm1(&pencil)).max(cond)
    } else {
        cond
    };
    if cond > cond_limit {
        return Err(SpectralError::SingularPencil { condition: cond });
    }
    Ok((cc + d * m_alpha) * inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ivp::SquareWell;
    use crate::matfun::{imag_part, min_eigenvalue, HermitianMatrix};
    use crate::quad::linspace;
    use proptest::prelude::*;

    fn free1() -> WeylFunction {
        WeylFunction::new(PotentialSpec::free(1), 0.0, BoundaryCondition::dirichlet(1)).unwrap()
    }

    fn well2() -> PotentialSpec {
        PotentialSpec::wells(
            2,
            vec![
                SquareWell { channel: 0, depth: 4.0, center: 1.0, width: 1.0 },
                SquareWell { channel: 1, depth: 1.0, center: 0.5, width: 2.0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn free_dirichlet_truncated() {
        let z = c(0.0, 2.0);
        let m = m_truncated(&PotentialSpec::free(1), 0.0, &BoundaryCondition::dirichlet(1), z, 40.0).unwrap();
        assert!((m[(0, 0)] - c(-1.0, 1.0)).norm() < 1e-6, "{m}");
    }

    #[test]
    fn constant_diagonal_truncated() {
        let v = PotentialSpec::constant(HermitianMatrix::diagonal(&[0.5, -1.0]));
        let z = c(0.3, 1.5);
        let m = m_truncated(&v, 0.0, &BoundaryCondition::dirichlet(2), z, 60.0).unwrap();
        for (j, vj) in [0.5, -1.0].iter().enumerate() {
            assert!((m[(j, j)] - I * principal_sqrt(z - vj)).norm() < 1e-6);
        }
        assert!(m[(0, 1)].norm() < 1e-9);
    }

    #[test]
    fn neumann_closed_form() {
        let w = WeylFunction::new(PotentialSpec::free(1), 0.0, BoundaryCondition::neumann(1)).unwrap();
        let m = w.m(c(0.0, 2.0)).unwrap();
        assert!((m[(0, 0)] - c(0.5, 0.5)).norm() < 1e-10, "{m}");
        let mt = m_truncated(&PotentialSpec::free(1), 0.0, &BoundaryCondition::neumann(1), c(0.0, 2.0), 40.0).unwrap();
        assert!((mt[(0, 0)] - c(0.5, 0.5)).norm() < 1e-6);
    }

    #[test]
    fn free_near_axis() {
        let z = c(4.0, 0.01);
        let m = free1().m(z).unwrap();
        assert!((m[(0, 0)] - I * principal_sqrt(z)).norm() < 1e-10);
        assert!((m[(0, 0)] - c(-0.0025, 2.0)).norm() < 1e-4);
    }

    #[test]
    fn doubling_schedule_converges_and_contracts() {
        let w = WeylFunction::new(well2(), 0.0, BoundaryCondition::dirichlet(2))
            .unwrap()
            .with_closure(Closure::DirichletCap);
        let z = c(0.5, 1.0);
        let v = w.evaluate(z).unwrap();
        let exact = WeylFunction::new(well2(), 0.0, BoundaryCondition::dirichlet(2)).unwrap().m(z).unwrap();
        assert!((&v.m - &exact).norm() < 1e-7);
        if v.gaps.len() >= 2 {
            let g = &v.gaps;
            assert!(g[g.len() - 1] / g[g.len() - 2] < 0.9, "{g:?}");
        }
        // the Neumann cap reaches the same limit
        let wn = w.clone().with_closure(Closure::NeumannCap);
        assert!((wn.m(z).unwrap() - &exact).norm() < 1e-6);
    }

    #[test]
    fn truncation_not_converged_is_reported() {
        let w = free1().with_closure(Closure::DirichletCap).with_truncation(Truncation {
            b_initial: Some(1.0),
            max_doublings: 2,
            ..Truncation::default()
        });
        let r = w.evaluate(c(1.0, 0.05));
        assert!(matches!(r, Err(SpectralError::TruncationNotConverged { .. })));
    }

    #[test]
    fn real_parameter_rejected() {
        assert!(matches!(free1().m(c(1.0, 0.0)), Err(SpectralError::RealSpectralParameter)));
    }

    #[test]
    fn symmetry_and_herglotz() {
        let alpha = HermitianMatrix::from_real(&[vec![0.3, 0.2], vec![0.2, -0.4]]).unwrap();
        let w = WeylFunction::new(well2(), 0.0, BoundaryCondition::new(alpha).unwrap()).unwrap();
        let z = c(1.0, 1.0);
        let m = w.m(z).unwrap();
        let mc = w.m(z.conj()).unwrap();
        assert!((&mc - m.adjoint()).norm() < 1e-8);
        assert!(min_eigenvalue(&imag_part(&m)) > -1e-8);
    }

    #[test]
    fn weyl_solution_free_closed_form() {
        let w = free1();
        let z = c(0.0, 2.0);
        let grid = linspace(0.0, 10.0, 41);
        let (psi, _) = w.weyl_solution(z, &grid).unwrap();
        let k = principal_sqrt(z);
        for (p, &x) in psi.iter().zip(&grid) {
            assert!((p[(0, 0)] - (I * k * x).exp()).norm() < 1e-6);
        }
    }

    #[test]
    fn weyl_solution_normalized_and_dtn() {
        let alpha = HermitianMatrix::from_real(&[vec![0.7, 0.1], vec![0.1, 0.2]]).unwrap();
        let bc = BoundaryCondition::new(alpha).unwrap();
        let w = WeylFunction::new(well2(), 0.0, bc.clone()).unwrap();
        let z = c(-0.3, 0.8);
        let (psi, dpsi) = w.weyl_solution(z, &[0.0]).unwrap();
        let norm = bc.sin() * &dpsi[0] + bc.cos() * &psi[0];
        assert!((norm - CMat::identity(2, 2)).norm() < 1e-8);
        let w0 = WeylFunction::new(well2(), 0.0, BoundaryCondition::dirichlet(2)).unwrap();
        let (psi, dpsi) = w0.weyl_solution(z, &[0.0]).unwrap();
        assert!((&psi[0] - CMat::identity(2, 2)).norm() < 1e-10);
        assert!((&dpsi[0] - w0.m(z).unwrap()).norm() < 1e-10);
    }

    #[test]
    fn weyl_solution_tail_decays() {
        let w = WeylFunction::new(well2(), 0.0, BoundaryCondition::dirichlet(2)).unwrap();
        let z = c(0.2, 0.5);
        let pts = linspace(0.0, 30.0, 601);
        let (psi, _) = w.weyl_solution(z, &pts).unwrap();
        let tail = |from: usize| -> f64 { psi[from..].iter().map(|p| p.norm_squared()).sum::<f64>() };
        let t: Vec<f64> = [100, 200, 300, 400].iter().map(|&i| tail(i)).collect();
        for w in t.windows(2) {
            assert!(w[1] < 0.9 * w[0], "{t:?}");
        }
    }

    #[test]
    fn gram_identity() {
        let alpha = HermitianMatrix::from_real(&[vec![0.4, -0.2], vec![-0.2, 1.1]]).unwrap();
        let w = WeylFunction::new(well2(), 0.0, BoundaryCondition::new(alpha).unwrap()).unwrap();
        for z in [c(1.0, 1.0), c(-2.0, 0.3), c(5.0, 2.0)] {
            let g = w.weyl_gram(z).unwrap();
            let im = imag_part(&w.m(z).unwrap());
            assert!((g * c(z.im, 0.0) - im).norm() < 1e-6, "z={z}");
        }
    }

    #[test]
    fn greens_free_closed_form_and_symmetry() {
        let w = free1();
        let z = c(0.0, 2.0);
        let k = principal_sqrt(z);
        let g = w.greens_kernel(z, 1.0, 2.0).unwrap();
        let oracle = (k * 1.0).sin() / k * (I * k * 2.0).exp();
        assert!((g[(0, 0)] - oracle).norm() < 1e-7);
        let w2 = WeylFunction::new(well2(), 0.0, BoundaryCondition::dirichlet(2)).unwrap();
        let z = c(0.4, 0.9);
        let a = w2.greens_kernel(z, 0.7, 1.6).unwrap();
        let b = w2.greens_kernel(z.conj(), 1.6, 0.7).unwrap();
        assert!((a.adjoint() - b).norm() < 1e-7);
        assert!(w2.greens_kernel(z, 0.0, 0.0).unwrap().norm() < 1e-9);
        let d = w2.greens_kernel(z, 1.3, 1.3).unwrap();
        assert!(min_eigenvalue(&imag_part(&d)) > -1e-10);
        // continuity across the diagonal
        let e = w2.greens_kernel(z, 1.3 + 1e-9, 1.3).unwrap();
        assert!((&d - e).norm() < 1e-7);
    }

    #[test]
    fn greens_derivative_jump() {
        let w = WeylFunction::new(well2(), 0.0, BoundaryCondition::dirichlet(2)).unwrap();
        let z = c(0.4, 0.9);
        let xp = 1.2;
        let h = 1e-4;
        let g = |x: f64| w.greens_kernel(z, x, xp).unwrap();
        let right = (g(xp + 2.0 * h) * c(-1.0, 0.0) + g(xp + h) * c(4.0, 0.0) - g(xp) * c(3.0, 0.0)) / c(2.0 * h, 0.0);
        let gl = |x: f64| w.greens_kernel(z, x, xp).unwrap();
        let left = (gl(xp - 2.0 * h) - gl(xp - h) * c(4.0, 0.0) + gl(xp) * c(3.0, 0.0)) / c(2.0 * h, 0.0);
        assert!((right - left + CMat::identity(2, 2)).norm() < 1e-5);
    }

    #[test]
    fn resolvent_trivial_and_linear() {
        let w = WeylFunction::new(well2(), 0.0, BoundaryCondition::dirichlet(2)).unwrap();
        let grid = linspace(0.0, 4.0, 81);
        let z = c(0.3, 1.0);
        let zero = vec![CVec::zeros(2); grid.len()];
        assert!(w.resolvent_apply(z, &grid, &zero).unwrap().iter().all(|v| v.norm() == 0.0));
        let f: Vec<CVec> = grid.iter().map(|&x| CVec::from_vec(vec![c(x.sin(), 0.0), c(0.0, x)])).collect();
        let g: Vec<CVec> = grid.iter().map(|&x| CVec::from_vec(vec![c(1.0, 0.0), c((-x).exp(), 0.0)])).collect();
        let fg: Vec<CVec> = f.iter().zip(&g).map(|(a, b)| a * c(2.0, 0.0) - b * c(0.0, 1.0)).collect();
        let rf = w.resolvent_apply(z, &grid, &f).unwrap();
        let rg = w.resolvent_apply(z, &grid, &g).unwrap();
        let rfg = w.resolvent_apply(z, &grid, &fg).unwrap();
        for k in 0..grid.len() {
            let comb = &rf[k] * c(2.0, 0.0) - &rg[k] * c(0.0, 1.0);
            assert!((&rfg[k] - comb).norm() < 1e-10 * (1.0 + rfg[k].norm()));
        }
    }

    #[test]
    fn resolvent_satisfies_equation_and_bc() {
        let alpha = HermitianMatrix::diagonal(&[0.4, 1.0]);
        let bc = BoundaryCondition::new(alpha).unwrap();
        let w = WeylFunction::new(well2(), 0.0, bc.clone()).unwrap();
        let z = c(0.5, 0.7);
        let h = 2e-3;
        let grid = linspace(0.0, 8.0, 4001);
        let u: Vec<CVec> = grid
            .iter()
            .map(|&x| CVec::from_vec(vec![c((-(x - 2.0) * (x - 2.0)).exp(), 0.0), c(0.0, x * (-x).exp())]))
            .collect();
        let v = w.resolvent_apply(z, &grid, &u).unwrap();
        let mut worst: f64 = 0.0;
        for k in (10..grid.len() - 10).step_by(37) {
            let x = grid[k];
            if w.potential.breakpoints().iter().any(|b| (b - x).abs() < 3.0 * h) {
                continue;
            }
            let d2 = (&v[k + 1] - &v[k] * c(2.0, 0.0) + &v[k - 1]) / c(h * h, 0.0);
            let r = -d2 + w.potential.value(x) * &v[k] - &v[k] * z - &u[k];
            worst = worst.max(r.norm());
        }
        assert!(worst < 1e-4, "{worst}");
        let dv = (&v[1] * c(4.0, 0.0) - &v[0] * c(3.0, 0.0) - &v[2]) / c(2.0 * h, 0.0);
        let b = bc.sin() * dv + bc.cos() * &v[0];
        assert!(b.norm() < 1e-5, "{}", b.norm());
    }

    #[test]
    fn lft_identity_and_cross_check() {
        let m = CMat::from_element(1, 1, c(-1.0, 1.0));
        let d = BoundaryCondition::dirichlet(1);
        assert!((lft_boundary_change(&m, &d, &d).unwrap() - &m).norm() < 1e-15);
        let n = BoundaryCondition::neumann(1);
        let z = c(0.0, 2.0);
        let md = free1().m(z).unwrap();
        let mn = lft_boundary_change(&md, &d, &n).unwrap();
        let direct = WeylFunction::new(PotentialSpec::free(1), 0.0, n.clone()).unwrap().m(z).unwrap();
        assert!((mn - direct).norm() < 1e-6);
    }

    #[test]
    fn lft_matches_direct_for_matrix_conditions() {
        let a = BoundaryCondition::new(HermitianMatrix::from_real(&[vec![0.2, 0.3], vec![0.3, -0.5]]).unwrap()).unwrap();
        let b = BoundaryCondition::new(HermitianMatrix::from_real(&[vec![1.0, -0.4], vec![-0.4, 0.6]]).unwrap()).unwrap();
        let z = c(0.7, 0.6);
        let ma = WeylFunction::new(well2(), 0.0, a.clone()).unwrap().m(z).unwrap();
        let mb = WeylFunction::new(well2(), 0.0, b.clone()).unwrap().m(z).unwrap();
        let via = lft_boundary_change(&ma, &a, &b).unwrap();
        assert!((via - &mb).norm() < 1e-7);
        let back = lft_boundary_change(&mb, &b, &a).unwrap();
        assert!((back - ma).norm() < 1e-7);
    }

    #[test]
    fn left_side_free() {
        let w = WeylFunction::with_side(PotentialSpec::free(1), 0.0, BoundaryCondition::dirichlet(1), Side::Left).unwrap();
        let m = w.m(c(0.0, 2.0)).unwrap();
        assert!((m[(0, 0)] - c(1.0, -1.0)).norm() < 1e-12);
        let wc = w.clone().with_closure(Closure::DirichletCap);
        assert!((wc.m(c(0.0, 2.0)).unwrap() - m).norm() < 1e-7);
    }

    #[test]
    fn cauchy_riemann_in_z() {
        let w = WeylFunction::new(well2(), 0.0, BoundaryCondition::dirichlet(2)).unwrap();
        let z = c(0.3, 0.8);
        let h = 1e-4;
        let f = |z: Complex64| w.m(z).unwrap();
        let dx = (f(z + h) - f(z - h)) / c(2.0 * h, 0.0);
        let dy = (f(z + c(0.0, h)) - f(z - c(0.0, h))) / c(0.0, 2.0 * h);
        assert!((dx - dy).norm() < 1e-5);
    }

    fn hermitian2() -> impl Strategy<Value = HermitianMatrix> {
        (-1.5f64..1.5, -1.5f64..1.5, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, d, re, im)| {
            HermitianMatrix::new(CMat::from_row_slice(2, 2, &[c(a, 0.0), c(re, im), c(re, -im), c(d, 0.0)])).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn lft_preserves_herglotz(a in hermitian2(), b in hermitian2(), re in -1.0f64..1.0, im in 0.1f64..1.0) {
            let alpha = BoundaryCondition::new(a).unwrap();
            let beta = BoundaryCondition::new(b).unwrap();
            // a genuine Herglotz value: i times a positive matrix plus a Hermitian part
            let m = CMat::from_row_slice(2, 2, &[c(re, 1.0), c(0.2, im * 0.3), c(0.2, im * 0.3), c(-re, 0.5 + im)]);
            prop_assume!(min_eigenvalue(&imag_part(&m)) > 0.0);
            if let Ok(mb) = lft_boundary_change(&m, &alpha, &beta) {
                prop_assert!(min_eigenvalue(&imag_part(&mb)) > -1e-9);
                let back = lft_boundary_change(&mb, &beta, &alpha).unwrap();
                prop_assert!((back - &m).norm() < 1e-9 * (1.0 + m.norm()));
            }
        }

        #[test]
        fn m_symmetric_under_conjugation(re in -3.0f64..3.0, im in 0.2f64..3.0) {
            let w = WeylFunction::new(well2(), 0.0, BoundaryCondition::dirichlet(2)).unwrap();
            let z = c(re, im);
            let m = w.m(z).unwrap();
            prop_assert!((w.m(z.conj()).unwrap() - m.adjoint()).norm() < 1e-8);
            prop_assert!(min_eigenvalue(&imag_part(&m)) > -1e-8);
        }
    }
}
