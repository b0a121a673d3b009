use crate::error::{Result, SpectralError};
use crate::matfun::{c, CMat, HermitianMatrix};

/// A square well `V_jj = -depth` on `|x - center| < width / 2` in one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareWell {
    pub channel: usize,
    pub depth: f64,
    pub center: f64,
    pub width: f64,
}

impl SquareWell {
    fn left(&self) -> f64 {
        self.center - 0.5 * self.width
    }
    fn right(&self) -> f64 {
        self.center + 0.5 * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    /// `V = 0`.
    Free,
    /// `V = V0` everywhere.
    Constant(HermitianMatrix),
    /// Square wells on the diagonal; zero elsewhere.
    DiagonalWells(Vec<SquareWell>),
    /// `V = diag(d) + coupling (E_01 + E_10)`.
    CoupledChannel { coupling: f64, diagonal: Vec<f64> },
    /// Piecewise-linear interpolation of Hermitian samples; clamped outside.
    SampledTable {
        x: Vec<f64>,
        values: Vec<HermitianMatrix>,
    },
}

/// Where the potential becomes constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Tail {
    /// First point (toward the ray's end) beyond which `V` is constant;
    /// infinite when the potential is constant everywhere.
    pub start: f64,
    pub value: HermitianMatrix,
}

/// A bounded, piecewise-continuous Hermitian matrix potential on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    dim: usize,
    kind: PotentialKind,
    domain: (f64, f64),
}

impl PotentialSpec {
    pub fn free(dim: usize) -> Self {
        Self {
            dim,
            kind: PotentialKind::Free,
            domain: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn constant(v0: HermitianMatrix) -> Self {
        Self {
            dim: v0.dim(),
            kind: PotentialKind::Constant(v0),
            domain: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn wells(dim: usize, wells: Vec<SquareWell>) -> Result<Self> {
        for w in &wells {
            if w.channel >= dim {
                return Err(SpectralError::InvalidInput(format!(
                    "well channel {} out of range for dimension {dim}",
                    w.channel
                )));
            }
            if !(w.width > 0.0) || !w.depth.is_finite() || !w.center.is_finite() {
                return Err(SpectralError::InvalidInput("well needs finite depth/center and positive width".into()));
            }
        }
        Ok(Self {
            dim,
            kind: PotentialKind::DiagonalWells(wells),
            domain: (f64::NEG_INFINITY, f64::INFINITY),
        })
    }

    pub fn coupled_channel(dim: usize, coupling: f64, diagonal: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(SpectralError::InvalidInput("coupled channel potential needs n >= 2".into()));
        }
        if diagonal.len() != dim {
            return Err(SpectralError::DimensionMismatch {
                expected: dim,
                found: diagonal.len(),
            });
        }
        Ok(Self {
            dim,
            kind: PotentialKind::CoupledChannel { coupling, diagonal },
            domain: (f64::NEG_INFINITY, f64::INFINITY),
        })
    }

    pub fn sampled(x: Vec<f64>, values: Vec<HermitianMatrix>) -> Result<Self> {
        if x.is_empty() || x.len() != values.len() {
            return Err(SpectralError::InvalidInput(
                "sampled table needs matching, nonempty x and value arrays".into(),
            ));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectralError::InvalidInput("table grid must be strictly increasing".into()));
        }
        let dim = values[0].dim();
        if let Some(bad) = values.iter().find(|v| v.dim() != dim) {
            return Err(SpectralError::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(Self {
            dim,
            kind: PotentialKind::SampledTable { x, values },
            domain: (f64::NEG_INFINITY, f64::INFINITY),
        })
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = (lo, hi);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain.0 && x <= self.domain.1
    }

    pub fn value(&self, x: f64) -> CMat {
        let n = self.dim;
        match &self.kind {
            PotentialKind::Free => CMat::zeros(n, n),
            PotentialKind::Constant(v) => v.as_matrix().clone(),
            PotentialKind::DiagonalWells(wells) => {
                let mut m = CMat::zeros(n, n);
                for w in wells {
                    if x > w.left() && x < w.right() {
                        m[(w.channel, w.channel)] -= c(w.depth, 0.0);
                    }
                }
                m
            }
            PotentialKind::CoupledChannel { coupling, diagonal } => {
                let mut m = CMat::from_fn(n, n, |i, j| if i == j { c(diagonal[i], 0.0) } else { c(0.0, 0.0) });
                m[(0, 1)] = c(*coupling, 0.0);
                m[(1, 0)] = c(*coupling, 0.0);
                m
            }
            PotentialKind::SampledTable { x: xs, values } => {
                if x <= xs[0] {
                    return values[0].as_matrix().clone();
                }
                let last = xs.len() - 1;
                if x >= xs[last] {
                    return values[last].as_matrix().clone();
                }
                let k = xs.partition_point(|&p| p <= x) - 1;
                let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
                values[k].as_matrix() * c(1.0 - t, 0.0) + values[k + 1].as_matrix() * c(t, 0.0)
            }
        }
    }

    /// Value on the open segment `(lo, hi)`; points at a segment end are
    /// nudged inward so jumps at breakpoints are never sampled from the wrong side.
    pub fn value_in_segment(&self, x: f64, lo: f64, hi: f64) -> CMat {
        let eps = 1e-11 * x.abs().max(1.0);
        let xe = if x - lo <= eps && hi - lo > 4.0 * eps {
            lo + 2.0 * eps
        } else if hi - x <= eps && hi - lo > 4.0 * eps {
            hi - 2.0 * eps
        } else {
            x
        };
        self.value(xe)
    }

    /// Average of the one-sided limits at `x`.
    pub fn value_averaged(&self, x: f64) -> CMat {
        let eps = 1e-9 * x.abs().max(1.0);
        (self.value(x - eps) + self.value(x + eps)) * c(0.5, 0.0)
    }

    /// Points where `V` or its derivative may jump, sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = match &self.kind {
            PotentialKind::DiagonalWells(wells) => wells.iter().flat_map(|w| [w.left(), w.right()]).collect(),
            PotentialKind::SampledTable { x, .. } => x.clone(),
            _ => Vec::new(),
        };
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Constant tail toward `+infinity`.
    pub fn right_tail(&self) -> Tail {
        match &self.kind {
            PotentialKind::DiagonalWells(wells) => Tail {
                start: wells.iter().map(|w| w.right()).fold(f64::NEG_INFINITY, f64::max),
                value: HermitianMatrix::zeros(self.dim),
            },
            PotentialKind::SampledTable { x, values } => Tail {
                start: x[x.len() - 1],
                value: values[values.len() - 1].clone(),
            },
            _ => Tail {
                start: f64::NEG_INFINITY,
                value: HermitianMatrix::new(self.value(0.0)).expect("builtin potentials are Hermitian"),
            },
        }
    }

    /// Constant tail toward `-infinity`.
    pub fn left_tail(&self) -> Tail {
        match &self.kind {
            PotentialKind::DiagonalWells(wells) => Tail {
                start: wells.iter().map(|w| w.left()).fold(f64::INFINITY, f64::min),
                value: HermitianMatrix::zeros(self.dim),
            },
            PotentialKind::SampledTable { x, values } => Tail {
                start: x[0],
                value: values[0].clone(),
            },
            _ => Tail {
                start: f64::INFINITY,
                value: HermitianMatrix::new(self.value(0.0)).expect("builtin potentials are Hermitian"),
            },
        }
    }

    /// True when every sample is real symmetric.
    pub fn is_real(&self) -> bool {
        let real = |m: &CMat| m.iter().all(|z| z.im == 0.0);
        match &self.kind {
            PotentialKind::Constant(v) => real(v.as_matrix()),
            PotentialKind::SampledTable { values, .. } => values.iter().all(|v| real(v.as_matrix())),
            _ => true,
        }
    }

    /// Crude bound on `||V||` used for step-size heuristics.
    pub fn norm_bound(&self) -> f64 {
        match &self.kind {
            PotentialKind::Free => 0.0,
            PotentialKind::Constant(v) => v.as_matrix().norm(),
            PotentialKind::DiagonalWells(w) => w.iter().map(|w| w.depth.abs()).sum(),
            PotentialKind::CoupledChannel { coupling, diagonal } => {
                coupling.abs() * 2f64.sqrt() + diagonal.iter().map(|d| d * d).sum::<f64>().sqrt()
            }
            PotentialKind::SampledTable { values, .. } => values.iter().map(|v| v.as_matrix().norm()).fold(0.0, f64::max),
        }
    }
}
