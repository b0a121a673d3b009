//! Subcommand implementations. Each writes its files under the output
//! directory and returns what should be printed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use weyl_core::expansion::{
    forward_transform, inverse_transform, relative_l2_error, HalfLineBasis, TransformResult,
};
use weyl_core::fullline::{fullline_inverse, fullline_measure, fullline_transform, FullLineWeyl};
use weyl_core::halfline::WeylFunction;
use weyl_core::herglotz::{assemble_measure, MatrixMeasure};
use weyl_core::matfun::eig_of_hermitian;
use weyl_core::verify::{self, Suite, VerifySetup};
use weyl_core::{CMat, CVec, SpectralError};

use crate::config::{Geometry, ProblemConfig};
use crate::io::{fmt_f64, parse_f64, write_text, Table};
use crate::{CliError, Command, Outcome, EXIT_OK, EXIT_VERIFY};

pub fn dispatch(cmd: &Command, cfg: &ProblemConfig, out: &Path) -> Result<Outcome, CliError> {
    match cmd {
        Command::MFunction { z } => {
            let mut zs = cfg.z_values();
            for s in z {
                zs.push(parse_complex(s)?);
            }
            m_function(cfg, &zs, out)
        }
        Command::SpectralMeasure => spectral_measure(cfg, cfg.geometry, out, "measure"),
        Command::FulllineMeasure => {
            let g = Geometry::FullLine { x0: cfg.geometry.point() };
            spectral_measure(cfg, g, out, "fullline_measure")
        }
        Command::Greens => greens(cfg, out),
        Command::Expand { signal, roundtrip } => {
            let path = match (signal, &cfg.signal) {
                (Some(p), _) => p.clone(),
                (None, Some(p)) => cfg.resolve(p),
                (None, None) => return Err(CliError::usage("expand needs --signal PATH or `signal` in the config")),
            };
            expand(cfg, &path, *roundtrip, out)
        }
        Command::Verify { suite } => {
            let suites = Suite::parse(suite).ok_or_else(|| CliError::usage(format!("unknown suite `{suite}`")))?;
            verify_cmd(cfg, &suites, out)
        }
    }
}

/// `re,im`.
pub fn parse_complex(s: &str) -> Result<Complex64, CliError> {
    let (re, im) = s
        .split_once(',')
        .ok_or_else(|| CliError::usage(format!("expected `re,im`, got `{s}`")))?;
    Ok(Complex64::new(parse_f64(re)?, parse_f64(im)?))
}

fn half_line(cfg: &ProblemConfig, a: f64) -> Result<WeylFunction, CliError> {
    Ok(WeylFunction::new(cfg.potential()?, a, cfg.boundary()?)?
        .with_config(cfg.numeric_config())
        .with_truncation(cfg.truncation())
        .with_closure(cfg.closure()))
}

fn full_line(cfg: &ProblemConfig, x0: f64) -> Result<FullLineWeyl, CliError> {
    let mut f = FullLineWeyl::new(cfg.potential()?, x0, cfg.boundary()?)?.with_config(cfg.numeric_config());
    f.plus = f.plus.with_truncation(cfg.truncation()).with_closure(cfg.closure());
    f.minus = f.minus.with_truncation(cfg.truncation()).with_closure(cfg.closure());
    Ok(f)
}

fn matrix_columns(prefix: &str, n: usize) -> Vec<String> {
    let mut h = Vec::new();
    for i in 0..n {
        for j in 0..n {
            h.push(format!("{prefix}{i}{j}_re"));
            h.push(format!("{prefix}{i}{j}_im"));
        }
    }
    h
}

fn matrix_fields(m: &CMat) -> Vec<String> {
    let mut r = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            r.push(fmt_f64(m[(i, j)].re));
            r.push(fmt_f64(m[(i, j)].im));
        }
    }
    r
}

fn written(files: &[PathBuf]) -> String {
    files.iter().map(|f| format!("wrote {}\n", f.display())).collect()
}

fn check_z(z: Complex64) -> Result<(), CliError> {
    if z.im == 0.0 {
        return Err(SpectralError::RealSpectralParameter.into());
    }
    Ok(())
}

pub fn m_function_table(cfg: &ProblemConfig, zs: &[Complex64]) -> Result<Table, CliError> {
    if zs.is_empty() {
        return Err(CliError::usage("no z values: give `z` in the config or --z re,im"));
    }
    for &z in zs {
        check_z(z)?;
    }
    let n = cfg.dimension;
    let mut head = vec!["z_re".to_string(), "z_im".to_string()];
    match cfg.geometry {
        Geometry::HalfLine { a } => {
            let w = half_line(cfg, a)?;
            head.extend(matrix_columns("m", n));
            head.push("b".into());
            let mut t = Table::new(head);
            for &z in zs {
                let v = w.compute(z)?;
                let mut row = vec![fmt_f64(z.re), fmt_f64(z.im)];
                row.extend(matrix_fields(&v.m));
                row.push(fmt_f64(v.length));
                t.push(row);
            }
            Ok(t)
        }
        Geometry::FullLine { x0 } => {
            let f = full_line(cfg, x0)?;
            head.extend(matrix_columns("mp", n));
            head.extend(matrix_columns("mm", n));
            head.push("b_plus".into());
            head.push("b_minus".into());
            let mut t = Table::new(head);
            for &z in zs {
                let p = f.plus.compute(z)?;
                let m = f.minus.compute(z)?;
                let mut row = vec![fmt_f64(z.re), fmt_f64(z.im)];
                row.extend(matrix_fields(&p.m));
                row.extend(matrix_fields(&m.m));
                row.push(fmt_f64(p.length));
                row.push(fmt_f64(m.length));
                t.push(row);
            }
            Ok(t)
        }
    }
}

fn m_function(cfg: &ProblemConfig, zs: &[Complex64], out: &Path) -> Result<Outcome, CliError> {
    let t = m_function_table(cfg, zs)?;
    let path = out.join("m_function.csv");
    t.write(&path)?;
    Ok(Outcome {
        stdout: written(&[path]),
        code: EXIT_OK,
    })
}

pub fn compute_measure(cfg: &ProblemConfig, geometry: Geometry) -> Result<MatrixMeasure, CliError> {
    let bp = cfg.partition();
    let opts = cfg.assembly();
    match geometry {
        Geometry::HalfLine { a } => {
            if bp.is_empty() {
                return Ok(MatrixMeasure::empty(cfg.dimension));
            }
            Ok(assemble_measure(&half_line(cfg, a)?, &bp, &opts)?)
        }
        Geometry::FullLine { x0 } => {
            if bp.is_empty() {
                let mut m = MatrixMeasure::empty(2 * cfg.dimension);
                m.block = Some(2 * cfg.dimension);
                return Ok(m);
            }
            Ok(fullline_measure(&full_line(cfg, x0)?, &bp, &opts)?)
        }
    }
}

/// Cell rows carry the eigenvalues of `mass / width` at the midpoint; atom
/// rows the eigenvalues of the point mass.
pub fn density_table(m: &MatrixMeasure) -> Table {
    let mut head = vec!["kind".to_string(), "lambda".into(), "width".into()];
    head.extend((0..m.dim).map(|j| format!("ev{j}")));
    let mut t = Table::new(head);
    let eigs = |x: &CMat| -> Vec<String> { eig_of_hermitian(x).values.iter().map(|v| fmt_f64(*v)).collect() };
    for k in 0..m.cells() {
        let (lo, hi) = m.cell(k);
        let w = hi - lo;
        let mut row = vec!["cell".to_string(), fmt_f64(0.5 * (lo + hi)), fmt_f64(w)];
        row.extend(eigs(&(&m.cell_mass[k] / Complex64::new(w, 0.0))));
        t.push(row);
    }
    for p in &m.point_masses {
        let mut row = vec!["atom".to_string(), fmt_f64(p.lambda), fmt_f64(0.0)];
        row.extend(eigs(&p.mass));
        t.push(row);
    }
    t
}

fn spectral_measure(cfg: &ProblemConfig, geometry: Geometry, out: &Path, stem: &str) -> Result<Outcome, CliError> {
    let m = compute_measure(cfg, geometry)?;
    let json = out.join(format!("{stem}.json"));
    write_text(&json, &m.to_json()?)?;
    let csv = out.join(format!("{stem}_density.csv"));
    density_table(&m).write(&csv)?;
    let mut s = written(&[json, csv]);
    let _ = writeln!(s, "{} cells, {} atoms", m.cells(), m.point_masses.len());
    Ok(Outcome { stdout: s, code: EXIT_OK })
}

fn greens(cfg: &ProblemConfig, out: &Path) -> Result<Outcome, CliError> {
    let g = cfg
        .greens
        .as_ref()
        .ok_or_else(|| CliError::usage("greens needs a `greens` section with `z` and `points`"))?;
    let n = cfg.dimension;
    let mut head: Vec<String> = ["z_re", "z_im", "x", "xp"].iter().map(|s| s.to_string()).collect();
    head.extend(matrix_columns("g", n));
    let mut t = Table::new(head);
    let eval: Box<dyn Fn(Complex64, f64, f64) -> Result<CMat, CliError>> = match cfg.geometry {
        Geometry::HalfLine { a } => {
            let w = half_line(cfg, a)?;
            Box::new(move |z, x, y| Ok(w.greens_kernel(z, x, y)?))
        }
        Geometry::FullLine { x0 } => {
            let f = full_line(cfg, x0)?;
            Box::new(move |z, x, y| Ok(f.greens(z, x, y)?))
        }
    };
    for &[re, im] in &g.z {
        let z = Complex64::new(re, im);
        check_z(z)?;
        for &[x, y] in &g.points {
            let mut row = vec![fmt_f64(re), fmt_f64(im), fmt_f64(x), fmt_f64(y)];
            row.extend(matrix_fields(&eval(z, x, y)?));
            t.push(row);
        }
    }
    let path = out.join("greens.csv");
    t.write(&path)?;
    Ok(Outcome {
        stdout: written(&[path]),
        code: EXIT_OK,
    })
}

/// Columns `x, re0, im0, re1, im1, ...`.
pub fn read_signal(path: &Path, n: usize) -> Result<(Vec<f64>, Vec<CVec>), CliError> {
    let t = Table::read(path)?;
    let cols = t.header.len();
    if cols < 1 || (cols - 1) % 2 != 0 {
        return Err(CliError::config("signal needs columns x, re0, im0, ..."));
    }
    let found = (cols - 1) / 2;
    if found != n {
        return Err(SpectralError::DimensionMismatch { expected: n, found }.into());
    }
    let x = t.floats(0)?;
    let mut h = vec![CVec::zeros(n); x.len()];
    for j in 0..n {
        let re = t.floats(1 + 2 * j)?;
        let im = t.floats(2 + 2 * j)?;
        for (k, hk) in h.iter_mut().enumerate() {
            hk[j] = Complex64::new(re[k], im[k]);
        }
    }
    Ok((x, h))
}

pub fn signal_table(x: &[f64], h: &[CVec]) -> Table {
    let n = h.first().map_or(0, |v| v.len());
    let mut head = vec!["x".to_string()];
    for j in 0..n {
        head.push(format!("re{j}"));
        head.push(format!("im{j}"));
    }
    let mut t = Table::new(head);
    for (xk, v) in x.iter().zip(h) {
        let mut row = vec![fmt_f64(*xk)];
        for z in v.iter() {
            row.push(fmt_f64(z.re));
            row.push(fmt_f64(z.im));
        }
        t.push(row);
    }
    t
}

fn expand(cfg: &ProblemConfig, signal: &Path, roundtrip: bool, out: &Path) -> Result<Outcome, CliError> {
    let (x, h) = read_signal(signal, cfg.dimension)?;
    let exec = cfg.numeric.exec;
    let meas = compute_measure(cfg, cfg.geometry)?;
    let (t, back): (TransformResult, Option<Vec<CVec>>) = match cfg.geometry {
        Geometry::HalfLine { a } => {
            let basis = HalfLineBasis::new(cfg.potential()?, a, cfg.boundary()?);
            let t = forward_transform(&basis, &x, &h, &meas, exec)?;
            let back = if roundtrip { Some(inverse_transform(&t, &basis, &x, exec)?) } else { None };
            (t, back)
        }
        Geometry::FullLine { x0 } => {
            let f = full_line(cfg, x0)?;
            let t = fullline_transform(&f, &x, &h, &meas, exec)?;
            let back = if roundtrip { Some(fullline_inverse(&t, &f, &x, exec)?) } else { None };
            (t, back)
        }
    };
    let json = out.join("transform.json");
    write_text(&json, &t.to_json()?)?;
    let mut files = vec![json];
    let mut extra = String::new();
    if let Some(b) = back {
        let p = out.join("reconstruction.csv");
        signal_table(&x, &b).write(&p)?;
        files.push(p);
        let err = relative_l2_error(&x, &b, &h);
        let _ = writeln!(extra, "relative L2 error {}", fmt_f64(err));
    }
    Ok(Outcome {
        stdout: written(&files) + &extra,
        code: EXIT_OK,
    })
}

pub fn verify_setup(cfg: &ProblemConfig) -> Result<VerifySetup, CliError> {
    let mut s = VerifySetup::new(cfg.potential()?, cfg.geometry.point(), cfg.boundary()?);
    s.config = cfg.numeric_config();
    s.schedule = cfg.numeric.eps.clone();
    if let Some([_, hi]) = cfg.numeric.window {
        s.lambda_max = hi;
    }
    if let Some(c) = cfg.numeric.cells {
        s.cells = c;
    }
    Ok(s)
}

fn verify_cmd(cfg: &ProblemConfig, suites: &[Suite], out: &Path) -> Result<Outcome, CliError> {
    let report = verify::run(&verify_setup(cfg)?, suites)?;
    let text = report.to_text();
    let json = out.join("verify_report.json");
    write_text(&json, &report.to_json()?)?;
    let txt = out.join("verify_report.txt");
    write_text(&txt, &text)?;
    Ok(Outcome {
        stdout: text,
        code: if report.passed() { EXIT_OK } else { EXIT_VERIFY },
    })
}
