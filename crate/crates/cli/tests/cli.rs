use std::path::Path;
use std::process::{Command, Output};

use weyl_cli::io::Table;

fn weyl(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_weyl"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const FREE: &str = r#"{"dimension": 1, "potential": {"family": "free"}, "boundary": "dirichlet", "z": [[0, 2]]}"#;

#[test]
fn free_m_at_2i() {
    let d = tempfile::tempdir().unwrap();
    let o = weyl(d.path(), FREE, &["m-function"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = Table::read(&d.path().join("m_function.csv")).unwrap();
    let re = t.floats(2).unwrap()[0];
    let im = t.floats(3).unwrap()[0];
    assert!((re + 1.0).abs() < 1e-6 && (im - 1.0).abs() < 1e-6, "{re} {im}");
}

#[test]
fn invalid_config_is_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let o = weyl(d.path(), r#"{"dimension": 1, "potential": {"family": "free", "depth": 1}}"#, &["m-function"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!stderr(&o).is_empty());
    let o = weyl(d.path(), "{not json", &["m-function"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn real_z_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let o = weyl(d.path(), FREE, &["m-function", "--z", "1,0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Im z must be nonzero"), "{}", stderr(&o));
}

#[test]
fn free_density_at_4() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"dimension": 1, "potential": {"family": "free"}, "numeric": {"window": [3.5, 4.5], "cells": 100}}"#;
    let o = weyl(d.path(), cfg, &["spectral-measure"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = Table::read(&d.path().join("measure_density.csv")).unwrap();
    let lam = t.floats(1).unwrap();
    let dens = t.floats(3).unwrap();
    let k = lam.iter().position(|&l| (l - 4.0).abs() < 6e-3).unwrap();
    assert!((dens[k] - 2.0 / std::f64::consts::PI).abs() < 1e-3, "{}", dens[k]);
}

#[test]
fn empty_window_gives_empty_measure() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"dimension": 1, "potential": {"family": "free"}, "numeric": {"window": [2, 2]}}"#;
    let o = weyl(d.path(), cfg, &["spectral-measure"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = Table::read(&d.path().join("measure_density.csv")).unwrap();
    assert!(t.rows.is_empty());
}

#[test]
fn well_produces_atom_row() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"dimension": 1,
        "potential": {"family": "wells", "wells": [{"depth": 10, "center": 0.5, "width": 1}]},
        "numeric": {"window": [-12, 4], "cells": 64}}"#;
    let o = weyl(d.path(), cfg, &["spectral-measure"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = Table::read(&d.path().join("measure_density.csv")).unwrap();
    let atoms: Vec<_> = t.rows.iter().filter(|r| r[0] == "atom").collect();
    assert_eq!(atoms.len(), 1);
    let lam: f64 = atoms[0][1].parse().unwrap();
    assert!((lam + 4.6242).abs() < 1e-3, "{lam}");
}

fn write_signal(dir: &Path, n: usize, f: impl Fn(f64) -> f64) -> String {
    let x = weyl_core::quad::linspace(0.0, 3.0, 601);
    let h: Vec<_> = x
        .iter()
        .map(|&t| weyl_core::CVec::from_element(n, weyl_core::matfun::c(f(t), 0.0)))
        .collect();
    let p = dir.join("signal.csv");
    weyl_cli::commands::signal_table(&x, &h).write(&p).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn bump_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let sig = write_signal(d.path(), 1, |x| {
        let t = x - 1.5;
        if t.abs() < 0.5 {
            (std::f64::consts::PI * t).cos().powi(4)
        } else {
            0.0
        }
    });
    let cfg = r#"{"dimension": 1, "potential": {"family": "free"}, "numeric": {"window": [0, 400], "cells": 4000}}"#;
    let o = weyl(d.path(), cfg, &["expand", "--signal", &sig, "--roundtrip"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let err: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("relative L2 error "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 5e-3, "{err}");
}

#[test]
fn zero_signal_gives_zero_output() {
    let d = tempfile::tempdir().unwrap();
    let sig = write_signal(d.path(), 1, |_| 0.0);
    let cfg = r#"{"dimension": 1, "potential": {"family": "free"}, "numeric": {"window": [0, 20], "cells": 20}}"#;
    let o = weyl(d.path(), cfg, &["expand", "--signal", &sig, "--roundtrip"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = Table::read(&d.path().join("reconstruction.csv")).unwrap();
    assert!(t.floats(1).unwrap().iter().chain(&t.floats(2).unwrap()).all(|v| *v == 0.0));
    let tr = weyl_core::expansion::TransformResult::from_json(
        &std::fs::read_to_string(d.path().join("transform.json")).unwrap(),
    )
    .unwrap();
    assert!(tr.values.iter().all(|v| v.norm() == 0.0));
}

#[test]
fn dimension_mismatch_is_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let sig = write_signal(d.path(), 2, |x| x);
    let o = weyl(d.path(), FREE, &["expand", "--signal", &sig]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn non_hermitian_alpha_is_reported() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"dimension": 2, "potential": {"family": "free"}, "boundary": [[0, 1], [0, 0]]}"#;
    let o = weyl(d.path(), cfg, &["verify"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).to_lowercase().contains("hermitian"), "{}", stderr(&o));
}

#[test]
fn unknown_suite_is_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let o = weyl(d.path(), FREE, &["verify", "--suite", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_suite_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = weyl(d.path(), FREE, &["verify", "--suite", "lft"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(d.path().join("verify_report.json").exists());
}

#[test]
fn fullline_measure_has_block_marker() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"dimension": 1, "potential": {"family": "free"},
        "geometry": {"kind": "full_line", "x0": 0}, "numeric": {"window": [0, 10], "cells": 20}}"#;
    let o = weyl(d.path(), cfg, &["fullline-measure"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("fullline_measure.json")).unwrap()).unwrap();
    assert_eq!(v["block"], serde_json::json!(2));
}

#[test]
fn greens_table_and_tol_override() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"dimension": 1, "potential": {"family": "free"},
        "greens": {"z": [[0, 2]], "points": [[1, 2], [2, 1]]}}"#;
    let o = weyl(d.path(), cfg, &["greens", "--tol", "psd=1e-9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = Table::read(&d.path().join("greens.csv")).unwrap();
    assert_eq!(t.rows.len(), 2);
    let o = weyl(d.path(), cfg, &["greens", "--tol", "bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
}
