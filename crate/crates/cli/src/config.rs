//! JSON problem description: potential, boundary condition, geometry and
//! numeric settings. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Deserialize;

use weyl_core::halfline::{Closure, Truncation};
use weyl_core::herglotz::{sqrt_graded_partition, uniform_partition, AssemblyOptions, EpsSchedule};
use weyl_core::ivp::{PotentialSpec, SquareWell};
use weyl_core::{BoundaryCondition, CMat, ExecMode, HermitianMatrix, IntegratorSettings, NumericConfig, Tolerances};

use crate::CliError;

/// A matrix entry: a real number or an `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    fn value(self) -> Complex64 {
        match self {
            Entry::Real(r) => Complex64::new(r, 0.0),
            Entry::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

/// Row-major nested arrays.
pub type MatrixLiteral = Vec<Vec<Entry>>;

pub fn matrix_from_literal(rows: &MatrixLiteral, n: usize) -> Result<CMat, CliError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::config(format!("expected a {n}x{n} matrix")));
    }
    Ok(CMat::from_fn(n, n, |i, j| rows[i][j].value()))
}

fn hermitian(rows: &MatrixLiteral, n: usize) -> Result<HermitianMatrix, CliError> {
    Ok(HermitianMatrix::new(matrix_from_literal(rows, n)?)?)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellConfig {
    #[serde(default)]
    pub channel: usize,
    pub depth: f64,
    pub center: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    Free {},
    Constant {
        value: MatrixLiteral,
    },
    Wells {
        wells: Vec<WellConfig>,
    },
    Coupled {
        coupling: f64,
        diagonal: Vec<f64>,
    },
    /// Samples given inline or in a JSON file `{"x": [...], "values": [...]}`.
    Table {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        x: Option<Vec<f64>>,
        #[serde(default)]
        values: Option<Vec<MatrixLiteral>>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    x: Vec<f64>,
    values: Vec<MatrixLiteral>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum BoundaryConfig {
    Named(String),
    Matrix(MatrixLiteral),
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig::Named("dirichlet".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    HalfLine {
        #[serde(default)]
        a: f64,
    },
    FullLine {
        #[serde(default)]
        x0: f64,
    },
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry::HalfLine { a: 0.0 }
    }
}

impl Geometry {
    /// Endpoint or reference point.
    pub fn point(self) -> f64 {
        match self {
            Geometry::HalfLine { a } => a,
            Geometry::FullLine { x0 } => x0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureConfig {
    #[default]
    Auto,
    DirichletCap,
    NeumannCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationConfig {
    pub b_initial: Option<f64>,
    pub max_doublings: u32,
    pub growth: f64,
    pub tol: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        let t = Truncation::default();
        Self {
            b_initial: t.b_initial,
            max_doublings: t.max_doublings,
            growth: t.growth,
            tol: t.tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    #[default]
    Uniform,
    /// Refined like `sqrt` toward the lower window end.
    Sqrt,
}

pub const DEFAULT_WINDOW: [f64; 2] = [0.0, 100.0];
pub const DEFAULT_CELLS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericSettings {
    pub tol: Tolerances,
    pub integrator: IntegratorSettings,
    pub exec: ExecMode,
    pub closure: ClosureConfig,
    pub truncation: TruncationConfig,
    /// Spectral window; commands choose a default when absent.
    pub window: Option<[f64; 2]>,
    pub cells: Option<usize>,
    pub partition: PartitionKind,
    pub eps: EpsSchedule,
    pub quad_points: usize,
    pub detect_atoms: bool,
    pub min_atom_weight: f64,
}

impl Default for NumericSettings {
    fn default() -> Self {
        let o = AssemblyOptions::default();
        Self {
            tol: Tolerances::default(),
            integrator: IntegratorSettings::default(),
            exec: ExecMode::default(),
            closure: ClosureConfig::default(),
            truncation: TruncationConfig::default(),
            window: None,
            cells: None,
            partition: PartitionKind::default(),
            eps: o.schedule,
            quad_points: o.quad_points,
            detect_atoms: o.detect_atoms,
            min_atom_weight: o.min_atom_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreensConfig {
    pub z: Vec<[f64; 2]>,
    /// `(x, x')` pairs.
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dimension: usize,
    pub potential: PotentialConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub numeric: NumericSettings,
    /// Spectral parameters for `m-function`.
    #[serde(default)]
    pub z: Vec<[f64; 2]>,
    #[serde(default)]
    pub greens: Option<GreensConfig>,
    /// Input signal for `expand`.
    #[serde(default)]
    pub signal: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ProblemConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: ProblemConfig =
            serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        if cfg.dimension == 0 {
            return Err(CliError::config("dimension must be positive"));
        }
        if let Some([lo, hi]) = cfg.numeric.window {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(CliError::config("window must be a finite interval [lo, hi]"));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn potential(&self) -> Result<PotentialSpec, CliError> {
        let n = self.dimension;
        let v = match &self.potential {
            PotentialConfig::Free {} => PotentialSpec::free(n),
            PotentialConfig::Constant { value } => PotentialSpec::constant(hermitian(value, n)?),
            PotentialConfig::Wells { wells } => PotentialSpec::wells(
                n,
                wells
                    .iter()
                    .map(|w| SquareWell {
                        channel: w.channel,
                        depth: w.depth,
                        center: w.center,
                        width: w.width,
                    })
                    .collect(),
            )?,
            PotentialConfig::Coupled { coupling, diagonal } => {
                PotentialSpec::coupled_channel(n, *coupling, diagonal.clone())?
            }
            PotentialConfig::Table { path, x, values } => {
                let (x, values) = match (path, x, values) {
                    (Some(p), None, None) => {
                        let p = self.resolve(p);
                        let text = std::fs::read_to_string(&p)
                            .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
                        let t: TableFile = serde_json::from_str(&text)
                            .map_err(|e| CliError::config(format!("invalid potential table: {e}")))?;
                        (t.x, t.values)
                    }
                    (None, Some(x), Some(v)) => (x.clone(), v.clone()),
                    _ => return Err(CliError::config("table potential needs either `path` or both `x` and `values`")),
                };
                let vals = values.iter().map(|m| hermitian(m, n)).collect::<Result<Vec<_>, _>>()?;
                PotentialSpec::sampled(x, vals)?
            }
        };
        Ok(v)
    }

    pub fn boundary(&self) -> Result<BoundaryCondition, CliError> {
        let n = self.dimension;
        match &self.boundary {
            BoundaryConfig::Named(s) => match s.as_str() {
                "dirichlet" => Ok(BoundaryCondition::dirichlet(n)),
                "neumann" => Ok(BoundaryCondition::neumann(n)),
                other => Err(CliError::config(format!("unknown boundary condition `{other}`"))),
            },
            BoundaryConfig::Matrix(m) => Ok(BoundaryCondition::new(hermitian(m, n)?)?),
        }
    }

    pub fn numeric_config(&self) -> NumericConfig {
        NumericConfig {
            tol: self.numeric.tol,
            integrator: self.numeric.integrator,
            exec: self.numeric.exec,
        }
    }

    pub fn truncation(&self) -> Truncation {
        let t = self.numeric.truncation;
        Truncation {
            b_initial: t.b_initial,
            max_doublings: t.max_doublings,
            growth: t.growth,
            tol: t.tol,
        }
    }

    pub fn closure(&self) -> Closure {
        match self.numeric.closure {
            ClosureConfig::Auto => Closure::Auto,
            ClosureConfig::DirichletCap => Closure::DirichletCap,
            ClosureConfig::NeumannCap => Closure::NeumannCap,
        }
    }

    pub fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions {
            schedule: self.numeric.eps.clone(),
            quad_points: self.numeric.quad_points,
            detect_atoms: self.numeric.detect_atoms,
            min_atom_weight: self.numeric.min_atom_weight,
            exec: self.numeric.exec,
        }
    }

    pub fn window(&self) -> [f64; 2] {
        self.numeric.window.unwrap_or(DEFAULT_WINDOW)
    }

    pub fn cells(&self) -> usize {
        self.numeric.cells.unwrap_or(DEFAULT_CELLS)
    }

    /// Breakpoints of the spectral window; empty when the window is.
    pub fn partition(&self) -> Vec<f64> {
        let [lo, hi] = self.window();
        let cells = self.cells();
        if lo == hi || cells == 0 {
            return Vec::new();
        }
        match self.numeric.partition {
            PartitionKind::Uniform => uniform_partition(lo, hi, cells),
            PartitionKind::Sqrt => sqrt_graded_partition(lo, hi, cells, lo),
        }
    }

    pub fn z_values(&self) -> Vec<Complex64> {
        self.z.iter().map(|[re, im]| Complex64::new(*re, *im)).collect()
    }

    /// Applies `key=value` overrides to the tolerances (and `rtol`/`atol`
    /// of the integrator).
    pub fn apply_tol_override(&mut self, spec: &str) -> Result<(), CliError> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--tol expects key=value, got `{spec}`")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("--tol value `{value}` is not a number")))?;
        let t = &mut self.numeric.tol;
        let slot = match key.trim() {
            "herm" => &mut t.herm,
            "id" => &mut t.id,
            "wronskian" => &mut t.wronskian,
            "ode" => &mut t.ode,
            "sym" => &mut t.sym,
            "psd" => &mut t.psd,
            "green" => &mut t.green,
            "cond_limit" => &mut t.cond_limit,
            "rtol" => &mut self.numeric.integrator.rtol,
            "atol" => &mut self.numeric.integrator.atol,
            "truncation" => &mut self.numeric.truncation.tol,
            other => return Err(CliError::usage(format!("unknown tolerance `{other}`"))),
        };
        *slot = v;
        Ok(())
    }
}
