//! Invariant suites run against a configured half-line problem, producing a
//! deterministic pass/fail report with residuals.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::NumericConfig;
use crate::error::{Result, SpectralError};
use crate::expansion::{
    forward_transform, free_tail_estimate, inverse_transform, l2_norm_squared, relative_l2_error, transform_norm_squared,
    HalfLineBasis,
};
use crate::halfline::{lft_boundary_change, WeylFunction};
use crate::herglotz::{assemble_measure, richardson, uniform_partition, AssemblyOptions, EpsSchedule};
use crate::ivp::{fundamental_system, identity_block_residual, wronskian_identities, PotentialSpec};
use crate::matfun::{c, imag_part, min_eigenvalue, BoundaryCondition, CMat, CVec, HermitianMatrix};
use crate::par::try_map_indexed;
use crate::quad::{grid_weights, linspace, GaussLegendre};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Wronskian,
    Herglotz,
    Lft,
    Parseval,
    Stone,
    Greens,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Wronskian,
        Suite::Herglotz,
        Suite::Lft,
        Suite::Parseval,
        Suite::Stone,
        Suite::Greens,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Wronskian => "wronskian",
            Suite::Herglotz => "herglotz",
            Suite::Lft => "lft",
            Suite::Parseval => "parseval",
            Suite::Stone => "stone",
            Suite::Greens => "greens",
        }
    }

    /// A suite name or `all`.
    pub fn parse(name: &str) -> Option<Vec<Suite>> {
        if name == "all" {
            return Some(Self::ALL.to_vec());
        }
        Self::ALL.iter().copied().find(|s| s.name() == name).map(|s| vec![s])
    }
}

/// The problem the suites run on together with the expansion window.
#[derive(Debug, Clone)]
pub struct VerifySetup {
    pub potential: PotentialSpec,
    pub a: f64,
    pub bc: BoundaryCondition,
    pub config: NumericConfig,
    /// Upper end of the spectral window of the Parseval suite.
    pub lambda_max: f64,
    pub cells: usize,
    pub schedule: EpsSchedule,
}

impl VerifySetup {
    pub fn new(potential: PotentialSpec, a: f64, bc: BoundaryCondition) -> Self {
        Self {
            potential,
            a,
            bc,
            config: NumericConfig::default(),
            lambda_max: 400.0,
            cells: 4000,
            schedule: EpsSchedule::default(),
        }
    }

    fn weyl(&self, bc: &BoundaryCondition) -> Result<WeylFunction> {
        Ok(WeylFunction::new(self.potential.clone(), self.a, bc.clone())?.with_config(self.config))
    }

    fn dim(&self) -> usize {
        self.potential.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(suite: Suite, name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            residual,
            tolerance,
            // NaN residuals fail
            passed: residual <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for ch in &self.checks {
            let _ = writeln!(
                s,
                "{:<10} {:<40} residual {:.6e}  tol {:.1e}  {}",
                ch.suite.name(),
                ch.name,
                ch.residual,
                ch.tolerance,
                if ch.passed { "PASS" } else { "FAIL" }
            );
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(s, "{} checks, {} failed", self.checks.len(), failed);
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| SpectralError::InvalidInput(e.to_string()))
    }
}

pub fn run(setup: &VerifySetup, suites: &[Suite]) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    for &s in suites {
        let checks = match s {
            Suite::Wronskian => wronskian_suite(setup)?,
            Suite::Herglotz => herglotz_suite(setup)?,
            Suite::Lft => lft_suite(setup)?,
            Suite::Parseval => parseval_suite(setup)?,
            Suite::Stone => stone_suite(setup)?,
            Suite::Greens => greens_suite(setup)?,
        };
        report.checks.extend(checks);
    }
    Ok(report)
}

fn zfmt(z: Complex64) -> String {
    format!("z={}{:+}i", z.re, z.im)
}

fn wronskian_suite(s: &VerifySetup) -> Result<Vec<Check>> {
    let grid = linspace(s.a, s.a + 3.0, 50);
    let tol = s.config.tol.wronskian;
    let mut out = Vec::new();
    for z in [c(1.0, 1.0), c(-2.0, 0.5), c(3.0, -0.7)] {
        let p = fundamental_system(&s.potential, z, s.a, &s.bc, &grid, &s.config.integrator)?;
        let q = fundamental_system(&s.potential, z.conj(), s.a, &s.bc, &grid, &s.config.integrator)?;
        let ids = wronskian_identities(&p, &q)?;
        let worst = ids.iter().fold(0.0f64, |m, r| m.max(*r));
        out.push(Check::new(Suite::Wronskian, format!("eight identities {}", zfmt(z)), worst, tol));
        let blk = identity_block_residual(&p, &q)?;
        out.push(Check::new(Suite::Wronskian, format!("block inverse {}", zfmt(z)), blk.max_scaled, tol));
    }
    Ok(out)
}

fn herglotz_suite(s: &VerifySetup) -> Result<Vec<Check>> {
    let w = s.weyl(&s.bc)?;
    let mut psd: f64 = 0.0;
    let mut sym: f64 = 0.0;
    for re in [-1.0, 0.5, 2.0] {
        for im in [0.25, 1.0, 4.0] {
            let z = c(re, im);
            let m = w.compute(z)?.m;
            let mc = w.compute(z.conj())?.m;
            psd = psd.max(-min_eigenvalue(&imag_part(&m)));
            sym = sym.max((&mc - m.adjoint()).norm() / m.norm().max(1.0));
        }
    }
    Ok(vec![
        Check::new(Suite::Herglotz, "Im m positive semidefinite", psd.max(0.0), s.config.tol.psd),
        Check::new(Suite::Herglotz, "m(conj z) = m(z)^*", sym, s.config.tol.sym),
    ])
}

/// A fixed non-diagonal Hermitian boundary matrix.
fn mixed_alpha(n: usize) -> Result<BoundaryCondition> {
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = c(0.3 + 0.25 * i as f64, 0.0);
        if i + 1 < n {
            m[(i, i + 1)] = c(0.2, 0.1);
            m[(i + 1, i)] = c(0.2, -0.1);
        }
    }
    BoundaryCondition::new(HermitianMatrix::new(m)?)
}

fn lft_suite(s: &VerifySetup) -> Result<Vec<Check>> {
    let n = s.dim();
    let z = c(1.0, 1.0);
    let m_alpha = s.weyl(&s.bc)?.compute(z)?.m;
    let other = if (s.bc.alpha.as_matrix() - BoundaryCondition::neumann(n).alpha.as_matrix()).norm() < 1e-12 {
        BoundaryCondition::dirichlet(n)
    } else {
        BoundaryCondition::neumann(n)
    };
    let mut out = Vec::new();
    for (label, beta) in [("rotated to a multiple of I", other), ("mixed Hermitian beta", mixed_alpha(n)?)] {
        let direct = s.weyl(&beta)?.compute(z)?.m;
        let mapped = lft_boundary_change(&m_alpha, &s.bc, &beta)?;
        let r = (&direct - mapped).norm() / direct.norm().max(1.0);
        out.push(Check::new(Suite::Lft, label, r, 1e-6));
    }
    Ok(out)
}

/// `cos^4(pi (x - center))` on `|x - center| < 1/2` along a fixed unit direction.
fn bump(grid: &[f64], center: f64, n: usize) -> Vec<CVec> {
    let e = CVec::from_element(n, c(1.0 / (n as f64).sqrt(), 0.0));
    grid.iter()
        .map(|&x| {
            let t = x - center;
            let v = if t.abs() < 0.5 { (PI * t).cos().powi(4) } else { 0.0 };
            &e * c(v, 0.0)
        })
        .collect()
}

fn window_floor(v: &PotentialSpec) -> f64 {
    let nb = v.norm_bound();
    if nb > 0.0 {
        -nb - 1.0
    } else {
        0.0
    }
}

fn parseval_suite(s: &VerifySetup) -> Result<Vec<Check>> {
    let n = s.dim();
    let w = s.weyl(&s.bc)?;
    let opts = AssemblyOptions {
        schedule: s.schedule.clone(),
        exec: s.config.exec,
        ..AssemblyOptions::default()
    };
    let lo = window_floor(&s.potential);
    let meas = assemble_measure(&w, &uniform_partition(lo, s.lambda_max, s.cells), &opts)?;
    let grid = linspace(s.a, s.a + 3.0, 1201);
    let h = bump(&grid, s.a + 1.5, n);
    let basis = HalfLineBasis::new(s.potential.clone(), s.a, s.bc.clone());
    let t = forward_transform(&basis, &grid, &h, &meas, s.config.exec)?;
    let norm = l2_norm_squared(&grid, &h);
    let inside = transform_norm_squared(&t)?;
    let tail = free_tail_estimate(&s.bc, s.a, &grid, &h, s.lambda_max)?;
    let back = inverse_transform(&t, &basis, &grid, s.config.exec)?;
    Ok(vec![
        Check::new(Suite::Parseval, "norm identity", ((inside + tail) - norm).abs() / norm, 5e-3),
        Check::new(Suite::Parseval, "round trip", relative_l2_error(&grid, &back, &h), 5e-3),
    ])
}

/// `(f, u)` with the quadrature weights of the grid.
fn inner(weights: &[f64], f: &[CVec], u: &[CVec]) -> Complex64 {
    weights.iter().zip(f.iter().zip(u)).map(|(w, (a, b))| a.dotc(b) * *w).sum()
}

/// `(f, F(H) E((l1, l2]) g)` from the assembled measure and from the
/// resolvent through Stone's formula, with `F(lambda) = lambda^2`. The
/// third value is the Cauchy-Schwarz bound used to scale the difference.
pub fn stone_pair(s: &VerifySetup, l1: f64, l2: f64) -> Result<(Complex64, Complex64, f64)> {
    let n = s.dim();
    let w = s.weyl(&s.bc)?;
    let grid = linspace(s.a, s.a + 3.0, 601);
    let wts = grid_weights(&grid);
    let f = bump(&grid, s.a + 1.5, n);
    let g = bump(&grid, s.a + 1.2, n);
    let ff = |l: f64| l * l;

    // measure side
    let cells = ((l2 - l1) / 0.01).ceil() as usize;
    let opts = AssemblyOptions {
        schedule: s.schedule.clone(),
        exec: s.config.exec,
        ..AssemblyOptions::default()
    };
    let meas = assemble_measure(&w, &uniform_partition(l1, l2, cells), &opts)?;
    let basis = HalfLineBasis::new(s.potential.clone(), s.a, s.bc.clone());
    let tf = forward_transform(&basis, &grid, &f, &meas, s.config.exec)?;
    let tg = forward_transform(&basis, &grid, &g, &meas, s.config.exec)?;
    let mut side_m = c(0.0, 0.0);
    let (mut nf, mut ng) = (0.0, 0.0);
    for k in 0..meas.cells() {
        let om = &meas.cell_mass[k];
        let l = tf.lambdas[k];
        side_m += tf.values[k].dotc(&(om * &tg.values[k])) * ff(l);
        nf += tf.values[k].dotc(&(om * &tf.values[k])).re * ff(l) * ff(l);
        ng += tg.values[k].dotc(&(om * &tg.values[k])).re;
    }
    for (j, p) in meas.point_masses.iter().enumerate() {
        if p.lambda > l1 && p.lambda <= l2 {
            let l = p.lambda;
            side_m += tf.atom_values[j].dotc(&(&p.mass * &tg.atom_values[j])) * ff(l);
            nf += tf.atom_values[j].dotc(&(&p.mass * &tf.atom_values[j])).re * ff(l) * ff(l);
            ng += tg.atom_values[j].dotc(&(&p.mass * &tg.atom_values[j])).re;
        }
    }

    // resolvent side
    let gl = GaussLegendre::new(64);
    let nodes: Vec<(f64, f64)> = gl.on_interval(l1, l2).collect();
    let eps = [0.04, 0.02, 0.01];
    let per_node = try_map_indexed(s.config.exec, nodes.len(), |k| -> Result<Vec<Complex64>> {
        let (l, wt) = nodes[k];
        eps.iter()
            .map(|&e| {
                let up = w.resolvent_apply(c(l, e), &grid, &g)?;
                let dn = w.resolvent_apply(c(l, -e), &grid, &g)?;
                Ok((inner(&wts, &f, &up) - inner(&wts, &f, &dn)) * (wt * ff(l)))
            })
            .collect()
    })?;
    let vals: Vec<CMat> = (0..eps.len())
        .map(|j| {
            let sum: Complex64 = per_node.iter().map(|v| v[j]).sum();
            CMat::from_element(1, 1, sum / (c(0.0, 2.0 * PI)))
        })
        .collect();
    let side_r = richardson(&eps, &vals)[(0, 0)];
    Ok((side_m, side_r, (nf * ng).sqrt()))
}

fn stone_suite(s: &VerifySetup) -> Result<Vec<Check>> {
    let (m, r, bound) = stone_pair(s, 1.0, 4.0)?;
    Ok(vec![Check::new(
        Suite::Stone,
        "F(H) E((1,4]) with F = lambda^2",
        (m - r).norm() / bound.max(f64::MIN_POSITIVE),
        5e-3,
    )])
}

fn greens_suite(s: &VerifySetup) -> Result<Vec<Check>> {
    let n = s.dim();
    let w = s.weyl(&s.bc)?;
    let z = c(0.5, 1.0);
    let a = s.a;
    let mut sym: f64 = 0.0;
    for (x, y) in [(a + 0.3, a + 1.1), (a + 1.7, a + 0.4), (a + 2.0, a + 2.5)] {
        let g = w.greens_kernel(z, x, y)?;
        let gc = w.greens_kernel(z.conj(), y, x)?;
        sym = sym.max((g.adjoint() - gc).norm() / g.norm().max(1.0));
    }
    let x = a + 0.8;
    let d = 1e-4;
    let g = |xx: f64| w.greens_kernel(z, xx, x);
    let (g0, g1, g2, gm1, gm2) = (g(x)?, g(x + d)?, g(x + 2.0 * d)?, g(x - d)?, g(x - 2.0 * d)?);
    let dr = (g1 * c(4.0, 0.0) - g2 - &g0 * c(3.0, 0.0)) / c(2.0 * d, 0.0);
    let dl = (gm2 + &g0 * c(3.0, 0.0) - gm1 * c(4.0, 0.0)) / c(2.0 * d, 0.0);
    let jump = (dr - dl + CMat::identity(n, n)).norm();
    Ok(vec![
        Check::new(Suite::Greens, "G(z,x,y)^* = G(conj z,y,x)", sym, 1e-7),
        Check::new(Suite::Greens, "derivative jump equals -I", jump, 1e-5),
    ])
}
